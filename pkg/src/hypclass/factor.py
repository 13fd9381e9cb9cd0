"""Elementary factorization p = -Lambda M + Q and its bracket inequalities.

With the weight <xi> = sqrt(gamma^2 + |xi'|^2) the factor is built from

    Lhat = phi1 + ell phi1 - lam phi1^3 <xi>^-2,   ell = sum_{j=3..r} beta_j phi_j,

Lambda = xi0 - Lhat, M = xi0 + Lhat, and Q is assembled from its explicit
expansion, so p + Lambda M - Q = 0 is a genuine algebraic check.

Boundedness of the quotients |{Lambda,Q}|/Q and |{Lambda,M}|/(sqrt Q + |Lambda-M|)
cannot be decided from finitely many samples; we evaluate the sup on shells
at decreasing distance d from Sigma and call it bounded when the sup grows by
at most a factor 2 from one shell to the next (sups under RATIO_FLOOR are
treated as noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import linalg
from .expr import Expr, PhasePoint, compile_exprs, const, poisson, sqrt, xi
from .spectral import SigmaError, SymbolSystem, sample_sigma

__all__ = [
    "Factorization", "FactorizationError", "BetaResult", "DefnReport", "SufficientReport",
    "SHELL_DISTANCES", "GROWTH_LIMIT", "LAM_CAP", "RATIO_FLOOR",
    "weight", "beta_solve", "build_factorization", "identity_residual", "shell_samples",
    "check_defn_one", "sufficient_conditions", "q_lower_bound",
]

SHELL_DISTANCES = (1e-1, 1e-2, 1e-3, 1e-4)
GROWTH_LIMIT = 2.0
LAM_CAP = 2.0 ** 10
FIT_RESIDUAL = 1e-6
BETA_TOL = 1e-10
# sups below this count as bounded when comparing shells
RATIO_FLOOR = 1e-2


class FactorizationError(RuntimeError):
    """No admissible penalty weight, or a singular bracket block."""


def weight(n: int, gamma: float = 1.0) -> Expr:
    """<xi>_gamma = sqrt(gamma^2 + xi_1^2 + ... + xi_n^2)."""
    s = const(gamma * gamma)
    for j in range(1, n + 1):
        s = s + xi(j) ** 2
    return sqrt(s)


@dataclass
class Factorization:
    Lambda: Expr
    Mfac: Expr
    Q: Expr
    n: int
    lam: float = 0.0
    beta: tuple = ()
    gamma: float = 1.0
    p: Expr | None = None
    name: str = ""

    def __post_init__(self):
        self._fn = compile_exprs([self.Lambda, self.Mfac, self.Q]
                                 + ([self.p] if self.p is not None else []))

    def values(self, rho: PhasePoint) -> np.ndarray:
        return np.array(self._fn(rho.x.tolist(), rho.xi.tolist()))

    def as_dict(self) -> dict:
        return {"lam": self.lam, "beta": list(self.beta), "gamma": self.gamma, "name": self.name}


# ---------------------------------------------------------------------------
# reaching points at a prescribed distance from Sigma

def _reach(sys: SymbolSystem, rho: PhasePoint, target: np.ndarray, tol: float = 1e-14,
           max_iter: int = 40) -> PhasePoint:
    """Gauss-Newton move from ``rho`` to a point with (phi_1..phi_d) = target.

    xi0 is kept fixed; steps are minimum norm so the point stays close to rho.
    """
    z = rho.vector()
    m = sys.dim
    xi0 = sys.n + 1
    free = np.array([i for i in range(m) if i != xi0])
    scale = max(float(np.max(np.abs(target))), 1e-300)
    for _ in range(max_iter):
        pt = PhasePoint.from_vector(z)
        res = sys.eval_functions(pt)[1:] - target
        if np.max(np.abs(res)) <= tol * scale:
            return pt
        jac = sys.jacobian(pt)[1:][:, free]
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        z = z.copy()
        z[free] += step
        if not np.all(np.isfinite(z)):
            break
    raise SigmaError("could not reach the requested shell point")


def _shell_target(rng: np.random.Generator, d: int, dist: float) -> np.ndarray:
    t = np.empty(d)
    t[0] = rng.choice((-1.0, 1.0)) * dist * rng.uniform(0.5, 1.0)
    for j in range(1, d):
        t[j] = rng.choice((-1.0, 1.0)) * dist ** rng.uniform(1.0, 2.0)
    return t


def shell_samples(sys: SymbolSystem, rng: np.random.Generator, count: int = 48,
                  distances: Sequence[float] = SHELL_DISTANCES, box: float = 0.05,
                  require_theta_nonneg: bool = True) -> dict:
    """{distance: [points]} with |phi_1| ~ d and |phi_j| = d^e, e in [1, 2].

    Each point is reached from a random point of Sigma near the base point.
    Points with theta < 0 are dropped when ``require_theta_nonneg`` (the
    factorization needs Q >= 0); the number dropped is kept in
    ``out["dropped"]``.
    """
    out: dict = {}
    dropped = 0
    for dist in distances:
        pts: list[PhasePoint] = []
        tries = 0
        while len(pts) < count:
            tries += 1
            if tries > 40 * count:
                raise SigmaError(f"only {len(pts)} shell points at distance {dist:g}")
            base = sample_sigma(sys, rng, 1, box=box)[0]
            try:
                pt = _reach(sys, base, _shell_target(rng, sys.d, dist))
            except (SigmaError, ArithmeticError, ValueError):
                continue
            if require_theta_nonneg and sys.theta is not None and sys.eval_theta(pt) < 0.0:
                dropped += 1
                continue
            pts.append(pt)
        out[float(dist)] = pts
    out["dropped"] = dropped
    return out


def _shells(samples) -> list[tuple[float, list]]:
    if isinstance(samples, Mapping):
        items = [(float(k), v) for k, v in samples.items() if k != "dropped"]
    else:
        items = [(float(k), v) for k, v in samples]
    return sorted(items, key=lambda kv: -kv[0])


def _growth(sups: Sequence[float]) -> list[float]:
    return [(b + RATIO_FLOOR) / (a + RATIO_FLOOR) for a, b in zip(sups, sups[1:])]


# ---------------------------------------------------------------------------
# beta

@dataclass
class BetaResult:
    beta: np.ndarray
    alpha: np.ndarray              # alpha_{jk} for 1 <= j, k <= d (0-based rows/cols)
    block: np.ndarray              # ({phi_k, phi_j})_{3 <= k, j <= r}
    orthogonality: float           # sum_j beta_j alpha_{j1}
    fit_residual: float
    r: int

    @property
    def ok(self) -> bool:
        return abs(self.orthogonality) <= BETA_TOL and self.fit_residual <= FIT_RESIDUAL


def _rank_r(sys: SymbolSystem, rho: PhasePoint) -> int:
    if sys.r is not None:
        return sys.r
    return linalg.numeric_rank(sys.raw_brackets(rho)[1:, 1:])


def fit_alpha(sys: SymbolSystem, rho: PhasePoint, rng: np.random.Generator | None = None,
              size: float = 1e-4, count: int | None = None) -> tuple[np.ndarray, float]:
    """Least-squares alpha_{jk} in {xi0 - phi1, phi_j} = sum_k alpha_{jk} phi_k near rho.

    Returns (alpha, max residual).  A constant column absorbs any value the
    bracket keeps on Sigma'; its size is part of the residual.
    """
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    d = sys.d
    count = count or max(4 * d + 4, 16)
    g = xi(0) - sys.phis[0]
    fn = compile_exprs([poisson(g, f) for f in sys.phis])
    rows, vals = [], []
    for _ in range(count):
        pt = _reach(sys, rho, rng.uniform(-size, size, d))
        rows.append(np.concatenate([[1.0], sys.eval_functions(pt)[1:]]))
        vals.append(fn(pt.x.tolist(), pt.xi.tolist()))
    a = np.array(rows)
    v = np.array(vals)
    coef, *_ = np.linalg.lstsq(a, v, rcond=None)
    resid = float(np.max(np.abs(a @ coef - v)))
    resid = max(resid, float(np.max(np.abs(coef[0]))))
    return coef[1:].T.copy(), resid


def beta_solve(sys: SymbolSystem, rho: PhasePoint | None = None,
               rng: np.random.Generator | None = None) -> BetaResult:
    """Solve sum_{k=3..r} {phi_k, phi_j} beta_k = alpha_{j1}, 3 <= j <= r."""
    rho = (rho if rho is not None else sys.base_point).normalized()
    r = _rank_r(sys, rho)
    alpha, resid = fit_alpha(sys, rho, rng)
    if r <= 2:
        return BetaResult(np.zeros(0), alpha, np.zeros((0, 0)), 0.0, resid, r)
    b = sys.raw_brackets(rho)[3:r + 1, 3:r + 1]
    if linalg.numeric_rank(b) < r - 2:
        raise FactorizationError("bracket block ({phi_k, phi_j})_{3<=k,j<=r} is singular")
    rhs = alpha[2:r, 0]
    beta = np.linalg.solve(b.T, rhs)
    orth = float(beta @ rhs)
    return BetaResult(beta, alpha, b, orth, resid, r)


# ---------------------------------------------------------------------------
# construction

def _assemble(sys: SymbolSystem, lam: float, beta: Sequence[float], gamma: float):
    n = sys.n
    phi = sys.phis
    w2 = const(1.0) / weight(n, gamma) ** 2
    ell = const(0.0)
    for j, bj in enumerate(beta, start=3):
        ell = ell + const(float(bj)) * phi[j - 1]
    f1 = phi[0]
    lhat = f1 + ell * f1 - const(lam) * f1 ** 3 * w2
    q = const(0.0)
    if sys.theta is not None:
        q = sys.theta * f1 ** 2
    for f in phi[1:]:
        q = q + f ** 2
    q = q - const(2.0) * ell * f1 ** 2 * (const(1.0) + ell / const(2.0))
    q = q + const(2.0 * lam) * f1 ** 4 * w2 * (const(1.0) + ell - const(lam / 2.0) * f1 ** 2 * w2)
    if sys.remainder is not None:
        q = q + sys.remainder
    return xi(0) - lhat, xi(0) + lhat, q


def build_factorization(sys: SymbolSystem, lam: float = 1.0, samples=None,
                        autotune: bool = True, gamma: float = 1.0,
                        rho: PhasePoint | None = None, rng: np.random.Generator | None = None,
                        lam_cap: float = LAM_CAP) -> Factorization:
    """Lambda = xi0 - Lhat, M = xi0 + Lhat and Q for ``sys``.

    Q >= 0 is checked on ``samples`` (shells by default).  With ``autotune``
    lam is doubled until that holds; past ``lam_cap`` it is an error.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    beta = beta_solve(sys, rho, rng).beta
    if samples is None:
        samples = shell_samples(sys, rng, count=16)
    pts = [p for _, ps in _shells(samples) for p in ps]
    while True:
        lam_e, m_e, q_e = _assemble(sys, lam, beta, gamma)
        fact = Factorization(lam_e, m_e, q_e, sys.n, lam=lam, beta=tuple(float(b) for b in beta),
                             gamma=gamma, p=sys.p, name=sys.name)
        worst = min((fact.values(p)[2] for p in pts), default=0.0)
        if worst >= 0.0:
            return fact
        if not autotune or 2 * lam > lam_cap:
            raise FactorizationError(f"Q = {worst:.3e} < 0 at a sample with lam = {lam:g}")
        lam *= 2


def identity_residual(fact: Factorization, points: Sequence[PhasePoint]) -> float:
    """max |p + Lambda M - Q| / (1 + |p|) over ``points``."""
    if fact.p is None:
        raise ValueError("factorization does not carry p")
    worst = 0.0
    for pt in points:
        lam_v, m_v, q_v, p_v = fact.values(pt)
        worst = max(worst, abs(p_v + lam_v * m_v - q_v) / (1.0 + abs(p_v)))
    return worst


def q_lower_bound(fact: Factorization, sys: SymbolSystem, points: Sequence[PhasePoint]) -> float:
    """Largest c with Q >= c (|phi'|^2 + theta phi1^2 + phi1^4 <xi>^-2) on ``points``."""
    c = math.inf
    for pt in points:
        f = sys.eval_functions(pt)[1:]
        th = sys.eval_theta(pt)
        wt = fact.gamma ** 2 + float(np.sum(pt.xi[1:] ** 2))
        ref = float(np.sum(f[1:] ** 2)) + th * f[0] ** 2 + f[0] ** 4 / wt
        if ref > 0:
            c = min(c, fact.values(pt)[2] / ref)
    return c


# ---------------------------------------------------------------------------
# inequalities

@dataclass
class DefnReport:
    distances: list
    c1: list                       # sup |{Lambda,Q}| / Q per shell
    c2: list                       # sup |{Lambda,M}| / (sqrt Q + |Lambda - M|) per shell
    growth1: list
    growth2: list
    q_negative: int
    limit: float = GROWTH_LIMIT

    @property
    def pass1(self) -> bool:
        return all(g <= self.limit for g in self.growth1)

    @property
    def pass2(self) -> bool:
        return all(g <= self.limit for g in self.growth2)

    @property
    def passed(self) -> bool:
        return self.pass1 and self.pass2 and self.q_negative == 0

    @property
    def C1(self) -> float:
        return max(self.c1)

    @property
    def C2(self) -> float:
        return max(self.c2)

    def growth_over(self, steps: int = 2) -> float:
        """Largest sup ratio between shells ``steps`` decades apart."""
        vals = [max(a, b) for a, b in zip(self.c1, self.c2)]
        out = [(vals[i + steps] + RATIO_FLOOR) / (vals[i] + RATIO_FLOOR)
               for i in range(len(vals) - steps)]
        return max(out, default=1.0)

    def as_dict(self) -> dict:
        return {"distances": self.distances, "C1": self.c1, "C2": self.c2,
                "growth1": self.growth1, "growth2": self.growth2,
                "q_negative": self.q_negative, "growth_limit": self.limit,
                "pass1": self.pass1, "pass2": self.pass2, "pass": self.passed}


def check_defn_one(fact: Factorization, samples, limit: float = GROWTH_LIMIT) -> DefnReport:
    """Shell sups of the two quotients of the elementary-factorization definition."""
    fn = compile_exprs([poisson(fact.Lambda, fact.Q), poisson(fact.Lambda, fact.Mfac),
                        fact.Lambda, fact.Mfac, fact.Q])
    dists, c1, c2 = [], [], []
    neg = 0
    for dist, pts in _shells(samples):
        s1 = s2 = 0.0
        for pt in pts:
            lq, lm, lv, mv, qv = fn(pt.x.tolist(), pt.xi.tolist())
            if qv < 0:
                neg += 1
                continue
            if qv > 0:
                s1 = max(s1, abs(lq) / qv)
            elif lq != 0:
                s1 = math.inf
            den = math.sqrt(qv) + abs(lv - mv)
            if den > 0:
                s2 = max(s2, abs(lm) / den)
            elif lm != 0:
                s2 = math.inf
        dists.append(dist)
        c1.append(s1)
        c2.append(s2)
    return DefnReport(dists, c1, c2, _growth(c1), _growth(c2), neg, limit)


@dataclass
class SufficientReport:
    distances: list
    ratio1: list                   # sup |{xi0-phi1, theta}| / (sqrt th + |phi1| + sqrt|phi'|)^2
    ratio2: list                   # sup |{{xi0-phi1, phi2}, phi2}| / (sqrt th + |phi1| + sqrt|phi'|)
    growth1: list
    growth2: list
    theta_negative: int
    defn: DefnReport | None = None
    lam: float | None = None
    limit: float = GROWTH_LIMIT
    message: str = ""

    @property
    def cond1(self) -> bool:
        return all(g <= self.limit for g in self.growth1)

    @property
    def cond2(self) -> bool:
        return all(g <= self.limit for g in self.growth2)

    @property
    def both(self) -> bool:
        return self.cond1 and self.cond2 and self.theta_negative == 0

    @property
    def implication_holds(self) -> bool:
        """False only when both conditions pass but the factorization check fails."""
        return not self.both or (self.defn is not None and self.defn.passed)

    def as_dict(self) -> dict:
        return {"distances": self.distances, "ratio1": self.ratio1, "ratio2": self.ratio2,
                "growth1": self.growth1, "growth2": self.growth2,
                "theta_negative": self.theta_negative, "growth_limit": self.limit,
                "cond1": self.cond1, "cond2": self.cond2, "lam": self.lam,
                "defn": None if self.defn is None else self.defn.as_dict(),
                "implication_holds": self.implication_holds, "message": self.message}


def sufficient_conditions(sys: SymbolSystem, samples=None, rng: np.random.Generator | None = None,
                          limit: float = GROWTH_LIMIT, gamma: float = 1.0) -> SufficientReport:
    """Sampled check of the two bracket bounds that guarantee a factorization.

    When both hold the factorization is built and checked on the same shells.
    """
    if sys.d < 2:
        raise ValueError("need at least phi_1 and phi_2")
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    if samples is None:
        samples = shell_samples(sys, rng)
    g = xi(0) - sys.phis[0]
    fn = compile_exprs([poisson(g, sys.theta_expr), poisson(poisson(g, sys.phis[1]), sys.phis[1])])
    dists, r1, r2 = [], [], []
    neg = 0
    for dist, pts in _shells(samples):
        s1 = s2 = 0.0
        for pt in pts:
            th = sys.eval_theta(pt)
            if th < 0:
                neg += 1
                continue
            f = sys.eval_functions(pt)[1:]
            den = math.sqrt(th) + abs(f[0]) + math.sqrt(float(np.linalg.norm(f[1:])))
            a, b = fn(pt.x.tolist(), pt.xi.tolist())
            s1 = max(s1, abs(a) / den ** 2)
            s2 = max(s2, abs(b) / den)
        dists.append(dist)
        r1.append(s1)
        r2.append(s2)
    rep = SufficientReport(dists, r1, r2, _growth(r1), _growth(r2), neg, limit=limit)
    if rep.both:
        try:
            fact = build_factorization(sys, samples=samples, gamma=gamma, rng=rng)
        except FactorizationError as exc:
            rep.message = str(exc)
        else:
            rep.lam = fact.lam
            rep.defn = check_defn_one(fact, samples, limit)
    return rep
