"""Hamilton flow, tangency orders and the transition invariants at a base point.

Conventions: the Hamilton field of p is (dp/dxi, -dp/dx), so that
d f(gamma(s))/ds = {p, f}(gamma(s)).  Near the base point a tangent
bicharacteristic is described with t = 1/s:

    x0 ~ 2 b t,  phi1 ~ b t^2,  phi2 ~ b t^3 / delta,  xi0 - mu phi1 ~ xi0bar t^4

where b is a root of 1/delta - kappa b + nu delta b^2 = 0 and
mu = sqrt(1 + theta).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import linalg
from .expr import (Expr, PhasePoint, as_expr, compile_exprs, const, gradient, hamilton_field,
                   parse, poisson, sqrt, xi)
from .spectral import SIGMA_TOL, SymbolSystem

__all__ = [
    "Trajectory", "TransitionAnalysis", "AIResult", "TangentSearchResult",
    "IntegrationError", "ReparametrizationError", "VanishingOrderError", "PreconditionError",
    "NoRealRoot", "integrate", "round_trip_error", "characteristic_point", "vanishing_order",
    "limit_estimate", "transition_invariants", "b_roots", "leading_constants",
    "constant_term_residual", "a_I_matrix", "expected_charpoly", "theta_dependence",
    "tangent_search",
]

RTOL = 1e-10
ATOL = 1e-10
ORDER_SLACK = 0.15


class IntegrationError(RuntimeError):
    """The integrator stopped early (step size underflow or non-finite state)."""

    def __init__(self, message: str, last_point: np.ndarray | None = None, s: float | None = None):
        super().__init__(message)
        self.last_point = last_point
        self.s = s


class ReparametrizationError(ValueError):
    """x0 is not a valid parameter along the trajectory."""


class VanishingOrderError(ValueError):
    """The log-log fit is not meaningful on the requested window."""


class PreconditionError(ValueError):
    """A hypothesis of the transition analysis fails at the base point."""


class NoRealRoot(ValueError):
    """1/delta - kappa b + nu delta b^2 = 0 has no nonzero real root."""


# ---------------------------------------------------------------------------
# integration

class _Flow:
    """Compiled Hamilton field and p for one symbol."""

    _cache: dict = {}

    def __init__(self, sys: SymbolSystem):
        m = sys.n + 1
        self.m = m
        self._field = compile_exprs(hamilton_field(sys.p, sys.n))
        self._p = compile_exprs((sys.p,))
        self._dp_dxi0 = compile_exprs((gradient(sys.p, sys.n)[m],))

    @classmethod
    def of(cls, sys: SymbolSystem) -> "_Flow":
        key = id(sys)
        hit = cls._cache.get(key)
        if hit is None or hit[0] is not sys:
            hit = (sys, cls(sys))
            cls._cache[key] = hit
        return hit[1]

    def rhs(self, s, y):
        return self._field(y[:self.m].tolist(), y[self.m:].tolist())

    def p(self, y) -> float:
        return self._p(y[:self.m].tolist(), y[self.m:].tolist())[0]

    def dp_dxi0(self, y) -> float:
        return self._dp_dxi0(y[:self.m].tolist(), y[self.m:].tolist())[0]


@dataclass
class Trajectory:
    """Accepted integrator steps: parameter values and phase-space states."""

    s: np.ndarray
    states: np.ndarray
    p_values: np.ndarray
    n: int
    tag: str = "s"

    def __len__(self):
        return self.s.size

    @property
    def t(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.s

    @property
    def x0(self) -> np.ndarray:
        return self.states[:, 0]

    def point(self, i: int) -> PhasePoint:
        return PhasePoint.from_vector(self.states[i])

    def p_drift(self) -> float:
        return float(np.max(np.abs(self.p_values - self.p_values[0])))

    def evaluate(self, f) -> np.ndarray:
        fn = compile_exprs((as_expr(f),))
        m = self.n + 1
        return np.array([fn(z[:m].tolist(), z[m:].tolist())[0] for z in self.states])

    def reparametrize_by_x0(self) -> "Trajectory":
        """Tag as x0-parametrized; x0 must be strictly monotone in s."""
        dx = np.diff(self.x0)
        if dx.size == 0 or not (np.all(dx > 0) or np.all(dx < 0)):
            raise ReparametrizationError("x0 is not strictly monotone along the trajectory")
        return Trajectory(self.s, self.states, self.p_values, self.n, tag="x0")

    def merged(self, other: "Trajectory") -> "Trajectory":
        s = np.concatenate([self.s, other.s])
        order = np.argsort(s, kind="stable")
        keep = np.concatenate([[True], np.diff(s[order]) != 0])
        idx = order[keep]
        return Trajectory(s[idx], np.vstack([self.states, other.states])[idx],
                          np.concatenate([self.p_values, other.p_values])[idx], self.n, self.tag)

    def to_csv(self, sys: SymbolSystem, stream=None) -> str:
        """CSV with columns s,t,x0..xn,xi0..xin,p,phi1..phid,theta."""
        m = self.n + 1
        head = (["s", "t"] + [f"x{i}" for i in range(m)] + [f"xi{i}" for i in range(m)]
                + ["p"] + [f"phi{j}" for j in range(1, sys.d + 1)] + ["theta"])
        fn = compile_exprs(list(sys.phis) + [sys.theta_expr])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for s, z, pv in zip(self.s, self.states, self.p_values):
            vals = fn(z[:m].tolist(), z[m:].tolist())
            t = 1.0 / s if s != 0 else math.inf
            w.writerow([_fmt(v) for v in [s, t, *z, pv, *vals]])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def _fmt(v: float) -> str:
    return repr(float(v))


def integrate(sys: SymbolSystem, rho0, span: tuple[float, float], rtol: float = RTOL,
              atol: float = ATOL, max_step: float = math.inf, method: str = "RK45") -> Trajectory:
    """Integrate the Hamilton equations of p from ``rho0`` over ``span`` in s.

    Uses an embedded Runge-Kutta pair (Dormand-Prince 5(4) by default) with
    step-size control.  Every accepted step is kept.
    """
    flow = _Flow.of(sys)
    y0 = rho0.vector() if isinstance(rho0, PhasePoint) else np.asarray(rho0, dtype=float)
    if y0.size != sys.dim:
        raise ValueError(f"initial state has size {y0.size}, expected {sys.dim}")
    sol = solve_ivp(flow.rhs, span, y0, method=method, rtol=rtol, atol=atol,
                    max_step=max_step)
    states = sol.y.T
    if sol.status != 0 or not np.all(np.isfinite(states)):
        last = states[-1] if states.size else y0
        raise IntegrationError(f"integration stopped at s={sol.t[-1]:.6g}: {sol.message}",
                               last_point=last, s=float(sol.t[-1]))
    pv = np.array([flow.p(z) for z in states])
    return Trajectory(s=sol.t.copy(), states=states.copy(), p_values=pv, n=sys.n)


def round_trip_error(sys: SymbolSystem, rho0, span: float, **kw) -> float:
    """Integrate over [0, span] and back; distance to the start."""
    fwd = integrate(sys, rho0, (0.0, span), **kw)
    back = integrate(sys, fwd.states[-1], (span, 0.0), **kw)
    y0 = rho0.vector() if isinstance(rho0, PhasePoint) else np.asarray(rho0, dtype=float)
    return float(np.max(np.abs(back.states[-1] - y0)))


def solve_xi0(sys: SymbolSystem, z: np.ndarray, guess: float, tol: float = 1e-15,
              max_iter: int = 50) -> np.ndarray:
    """Adjust xi0 (Newton) so that p(z) = 0, starting from ``guess``."""
    flow = _Flow.of(sys)
    z = np.array(z, dtype=float)
    k = sys.n + 1
    z[k] = guess
    for _ in range(max_iter):
        pv = flow.p(z)
        g = flow.dp_dxi0(z)
        if g == 0.0:
            raise ValueError("dp/dxi0 vanishes; cannot solve p = 0 for xi0")
        step = pv / g
        z[k] -= step
        if abs(step) <= tol * max(1.0, abs(z[k])):
            break
    return z


def characteristic_point(sys: SymbolSystem, rng: np.random.Generator, box: float = 0.2,
                         min_gap: float = 1e-3) -> PhasePoint:
    """Random point near the base point with p = 0 (a simple characteristic).

    xi0 is taken as the positive root, so the point stays off Sigma.
    """
    base = sys.base_point.vector()
    flow = _Flow.of(sys)
    k = sys.n + 1
    for _ in range(1000):
        z = base + rng.uniform(-box, box, size=base.size)
        z[k] = 0.0
        rest = flow.p(z)
        if rest <= min_gap:
            continue
        z = solve_xi0(sys, z, math.sqrt(rest))
        return PhasePoint.from_vector(z)
    raise ValueError("could not find a characteristic point off Sigma")


# ---------------------------------------------------------------------------
# vanishing orders

def _abscissa(traj: Trajectory, variable: str) -> tuple[np.ndarray, str]:
    if variable == "auto":
        dx = np.diff(traj.x0)
        variable = "x0" if dx.size and (np.all(dx > 0) or np.all(dx < 0)) else "t"
    if variable == "x0":
        return np.abs(traj.x0), "x0"
    if variable == "t":
        return np.abs(traj.t), "t"
    raise ValueError(f"unknown abscissa {variable!r}")


def vanishing_order(traj: Trajectory, f, window: tuple[float, float] | None = None,
                    variable: str = "auto", values: np.ndarray | None = None) -> float:
    """Least-squares slope of log|f| against log|x0| (or log t) on ``window``.

    The window must span at least one decade.  Returns inf when f vanishes
    identically on the window.  Sign changes (or isolated zeros) of f inside
    the window make the fit meaningless and raise VanishingOrderError.
    """
    absc, _ = _abscissa(traj, variable)
    vals = traj.evaluate(f) if values is None else np.asarray(values)
    if window is None:
        window = (float(np.min(absc[absc > 0])), float(np.max(absc)))
    lo, hi = window
    if not (lo > 0 and hi >= 10.0 * lo * (1 - 1e-12)):
        raise VanishingOrderError(f"window [{lo:g}, {hi:g}] spans less than one decade")
    sel = (absc >= lo) & (absc <= hi)
    if np.count_nonzero(sel) < 5:
        raise VanishingOrderError("fewer than 5 trajectory points inside the window")
    v = vals[sel]
    if np.all(v == 0.0):
        return math.inf
    if np.any(v == 0.0) or not (np.all(v > 0) or np.all(v < 0)):
        raise VanishingOrderError("f changes sign (or vanishes) inside the window")
    slope = np.polyfit(np.log(absc[sel]), np.log(np.abs(v)), 1)[0]
    return float(slope)


def limit_estimate(traj: Trajectory, f, m: float, variable: str = "auto",
                   values: np.ndarray | None = None, fraction: float = 0.05) -> float:
    """f / x0^m (or f / t^m) averaged over the points closest to the base point."""
    absc, name = _abscissa(traj, variable)
    vals = traj.evaluate(f) if values is None else np.asarray(values)
    base = traj.x0 if name == "x0" else traj.t
    order = np.argsort(absc)
    count = max(3, int(fraction * absc.size))
    idx = order[:count]
    return float(np.mean(vals[idx] / base[idx] ** m))


# ---------------------------------------------------------------------------
# transition invariants

@dataclass
class AIResult:
    matrix: np.ndarray
    case: str
    eigenvalues: np.ndarray
    charpoly: np.ndarray
    expected: np.ndarray
    charpoly_residual: float

    @property
    def has_unit_eigenvalue(self) -> bool:
        return bool(np.min(np.abs(self.eigenvalues - 1.0)) <= 1e-8)

    @property
    def other_real_negative(self) -> bool:
        rest = list(self.eigenvalues)
        rest.pop(int(np.argmin(np.abs(self.eigenvalues - 1.0))))
        return all(z.real < 0 for z in rest if abs(z.imag) <= 1e-9 * max(1.0, abs(z)))


@dataclass
class TransitionAnalysis:
    nu: float
    kappa: float
    delta: float
    dependent: bool
    discriminant: float
    exists_tangent: bool
    b_roots: list = field(default_factory=list)
    b: float | None = None
    leading: dict = field(default_factory=dict)
    a_I: AIResult | None = None
    checks: dict = field(default_factory=dict)
    r: int = 2

    def as_dict(self) -> dict:
        out = {"nu": self.nu, "kappa": self.kappa, "delta": self.delta,
               "kappa_delta": self.kappa * self.delta, "dependent": self.dependent,
               "discriminant": self.discriminant, "exists_tangent": self.exists_tangent,
               "b_roots": list(self.b_roots), "b": self.b, "leading": dict(self.leading),
               "checks": dict(self.checks)}
        if self.a_I is not None:
            out["a_I"] = {"case": self.a_I.case, "matrix": self.a_I.matrix.tolist(),
                          "eigenvalues": [[z.real, z.imag] for z in self.a_I.eigenvalues],
                          "charpoly": self.a_I.charpoly.tolist(),
                          "charpoly_residual": self.a_I.charpoly_residual}
        return out


def b_roots(kappa: float, nu: float, delta: float) -> tuple[list[float], float]:
    """Nonzero real roots of 1/delta - kappa b + nu delta b^2 = 0 and the chosen one.

    The chosen root makes delta kappa b smallest, which keeps the quadratic
    factor of the A_I characteristic polynomial stable.  (For nu > 0 this is
    the classical choice; for nu < 0 either root is admissible and the same
    rule is applied for determinism.)
    """
    if delta == 0.0:
        raise PreconditionError("delta = 0")
    if nu == 0.0:
        if kappa == 0.0:
            raise NoRealRoot("kappa = nu = 0: no root")
        b = 1.0 / (kappa * delta)
        return [b], b
    disc = kappa * kappa - 4.0 * nu
    if disc < 0.0:
        raise NoRealRoot(f"kappa^2 - 4 nu = {disc:.6g} < 0")
    root = math.sqrt(disc)
    roots = sorted({kappa / (2 * nu * delta) + root / (2 * nu * abs(delta)),
                    kappa / (2 * nu * delta) - root / (2 * nu * abs(delta))})
    roots = [b for b in roots if b != 0.0]
    if not roots:
        raise NoRealRoot("only the zero root")
    chosen = min(roots, key=lambda b: (delta * kappa * b, b))
    return roots, chosen


def leading_constants(kappa: float, nu: float, delta: float, b: float) -> dict:
    """Order-0 coefficients of the tangent solution."""
    return {"x0": 2.0 * b, "phi1": b, "phi2": b / delta, "theta_hat": -nu * b * b,
            "xi0": 0.5 * (kappa * b * b / delta - nu * b ** 3), "phi_rest": 0.0, "psi": 0.0}


def constant_term_residual(kappa: float, nu: float, delta: float, lead: Mapping) -> float:
    """Max residual of the order-0 equations of the reduced Hamilton system."""
    x0, p1, p2 = lead["x0"], lead["phi1"], lead["phi2"]
    th, x = lead["theta_hat"], lead["xi0"]
    eqs = [
        -4 * x + 2 * kappa * p1 * p2 + 2 * delta * th * p2,
        -x0 + 2 * p1,
        -2 * p1 + 2 * delta * p2,
        -2 * th - nu * x0 * p1,
        -3 * p2 + 2 * kappa * p1 ** 2 + 2 * delta * x + 2 * delta * th * p1,
    ]
    return float(max(abs(e) for e in eqs))


def expected_charpoly(kappa: float, delta: float, b: float, case: str) -> np.ndarray:
    quad = np.array([1.0, 5.0, 8.0 - 4.0 * kappa * delta * b])
    out = np.polymul(np.polymul([1.0, -1.0], [1.0, 6.0]), quad)
    if case == "independent":
        out = np.polymul(out, [1.0, 2.0])
    return out


def a_I_matrix(kappa: float, nu: float, delta: float, b: float,
               case: str = "independent", root_tol: float = 1e-10) -> AIResult:
    """Linearized order-0 matrix of the reduced system, with spectrum.

    Unknown ordering (X0, Phi2, Xi0, Phi1[, Theta]).  ``b`` must solve
    1/delta - kappa b + nu delta b^2 = 0; the entries rely on it.
    """
    if case not in ("independent", "dependent"):
        raise ValueError("case must be 'independent' or 'dependent'")
    res = 1.0 / delta - kappa * b + nu * delta * b * b
    scale = max(abs(1.0 / delta), abs(kappa * b), abs(nu * delta * b * b))
    if abs(res) > root_tol * max(1.0, scale):
        raise NoRealRoot(f"b={b!r} is not a root (residual {res:.3e})")
    kb = kappa * b + 1.0 / delta
    if case == "independent":
        a = np.array([
            [-1.0, 0.0, 0.0, 2.0, 0.0],
            [0.0, -3.0, 2 * delta, 2 * kb, 2 * delta * b],
            [0.0, 2 / delta, -4.0, 2 * kappa * b / delta, 2 * b],
            [0.0, 2 * delta, 0.0, -2.0, 0.0],
            [-nu * b, 0.0, 0.0, -2 * nu * b, -2.0],
        ])
    else:
        a = np.array([
            [-1.0, 0.0, 0.0, 2.0],
            [-2 * nu * delta * b * b, -3.0, 2 * delta, 2 * kb],
            [-2 * nu * b * b, 2 / delta, -4.0, 2 * kappa * b / delta],
            [0.0, 2 * delta, 0.0, -2.0],
        ])
    cp = linalg.charpoly(a)
    exp = expected_charpoly(kappa, delta, b, case)
    resid = float(np.max(np.abs(cp - exp) / np.maximum(1.0, np.abs(exp))))
    return AIResult(matrix=a, case=case, eigenvalues=linalg.eigvals(a), charpoly=cp,
                    expected=exp, charpoly_residual=resid)


def theta_dependence(sys: SymbolSystem, rho: PhasePoint, cutoff: float = 1e-7) -> tuple[bool, float]:
    """Is d theta a combination of d xi0, d phi_1..d phi_d at rho?

    Returns (dependent, relative least-squares residual).
    """
    gt = np.array(compile_exprs(gradient(sys.theta_expr, sys.n))(rho.x.tolist(), rho.xi.tolist()))
    norm = float(np.linalg.norm(gt))
    if norm == 0.0:
        return True, 0.0
    jac = sys.jacobian(rho)
    coef, *_ = np.linalg.lstsq(jac.T, gt, rcond=None)
    res = float(np.linalg.norm(jac.T @ coef - gt)) / norm
    return res <= cutoff, res


def transition_invariants(sys: SymbolSystem, rho: PhasePoint | None = None,
                          tol: float = 1e-8) -> TransitionAnalysis:
    """nu, kappa, delta at the base point, the tangency predicate and (when it
    holds) the selected root b, order-0 constants and A_I."""
    rho = (rho if rho is not None else sys.base_point).normalized()
    vals = sys.eval_functions(rho)
    if np.max(np.abs(vals)) > SIGMA_TOL:
        raise PreconditionError("base point is not on Sigma")
    f = xi(0) - sys.phis[0]
    th = sys.theta_expr
    # kappa is formed with mu phi1, mu = sqrt(1 + theta): that is the function
    # paired with xi0 in p = -(xi0 - mu phi1)(xi0 + mu phi1) + ...  Without the
    # rescaling an extra -{theta, phi2} term leaks in whenever {phi2, theta} != 0.
    fhat = xi(0) - sqrt(const(1.0) + th) * sys.phis[0]
    fns = [poisson(f, th), poisson(f, poisson(f, th)),
           poisson(poisson(fhat, sys.phis[1]), sys.phis[1]), poisson(sys.phis[0], sys.phis[1]), th,
           poisson(poisson(f, sys.phis[1]), sys.phis[1])]
    fns += [poisson(f, g) for g in sys.functions]
    b0 = sys.raw_brackets(rho)
    r = sys.r if sys.r is not None else linalg.numeric_rank(b0, warn=False)
    fns += [poisson(sys.phis[j - 1], th) for j in range(r + 1, sys.d + 1)]
    ev = compile_exprs(fns)(rho.x.tolist(), rho.xi.tolist())
    d_theta, nu, num, delta, theta0, num_raw = ev[:6]
    nf = ev[6:6 + sys.d + 1]
    higher = ev[6 + sys.d + 1:]
    checks = {"theta": abs(theta0), "xi0_minus_phi1_theta": abs(d_theta),
              "normal_form": max(abs(v) for v in nf),
              "phi_j_theta": max([abs(v) for v in higher], default=0.0)}
    for name, v in checks.items():
        if v > tol:
            raise PreconditionError(f"precondition {name} fails at the base point: {v:.3e} > {tol:g}")
    if abs(delta) <= tol:
        raise PreconditionError("delta = {phi1, phi2} vanishes at the base point")
    kappa = num / delta
    dep, dep_res = theta_dependence(sys, rho)
    checks["dependence_residual"] = dep_res
    checks["kappa_unscaled"] = num_raw / delta
    disc = kappa * kappa - 4.0 * nu
    out = TransitionAnalysis(nu=float(nu), kappa=float(kappa), delta=float(delta), dependent=dep,
                             discriminant=float(disc), exists_tangent=bool(disc > 0.0),
                             checks=checks, r=int(r))
    if out.exists_tangent:
        roots, b = b_roots(out.kappa, out.nu, out.delta)
        out.b_roots = roots
        out.b = b
        out.leading = leading_constants(out.kappa, out.nu, out.delta, b)
        out.a_I = a_I_matrix(out.kappa, out.nu, out.delta, b,
                             "dependent" if dep else "independent")
    return out


# ---------------------------------------------------------------------------
# tangent search

@dataclass
class TangentSearchResult:
    trajectory: Trajectory
    orders: dict
    limits: dict
    p_drift: float
    seed_t: float
    window: tuple
    abscissa: str
    tangent: bool
    message: str = ""

    def as_dict(self) -> dict:
        return {"orders": dict(self.orders), "limits": dict(self.limits), "p_drift": self.p_drift,
                "seed_t": self.seed_t, "window": list(self.window), "abscissa": self.abscissa,
                "tangent": self.tangent, "steps": len(self.trajectory), "message": self.message}


class TangentSearchError(RuntimeError):
    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}


def _seed(sys: SymbolSystem, analysis: TransitionAnalysis, t: float, tol: float = 1e-15,
          max_iter: int = 60) -> np.ndarray:
    """Point with x0, phi's (and theta) at their leading-order values, p = 0."""
    lead = analysis.leading
    b, delta = analysis.b, analysis.delta
    m = sys.n + 1
    targets = [(None, 2.0 * b * t), (sys.phis[0], b * t * t), (sys.phis[1], b * t ** 3 / delta)]
    targets += [(f, 0.0) for f in sys.phis[2:]]
    if not analysis.dependent:
        th_hat = lead["theta_hat"] * t * t
        targets.append((sys.theta_expr, 1.0 / (1.0 + th_hat) ** 2 - 1.0))
    exprs = [f for f, _ in targets if f is not None]
    fn = compile_exprs(exprs)
    jac_fn = compile_exprs([g for f in exprs for g in gradient(f, sys.n)])
    theta_fn = compile_exprs((sys.theta_expr, sys.phis[0]))
    want = np.array([v for _, v in targets])
    free = [i for i in range(sys.dim) if i != m]
    z = sys.base_point.vector()
    scale = np.maximum(np.abs(want), t ** 4)
    for _ in range(max_iter):
        vals = np.array([z[0]] + list(fn(z[:m].tolist(), z[m:].tolist())))
        res = vals - want
        jac = np.zeros((len(targets), sys.dim))
        jac[0, 0] = 1.0
        jac[1:] = np.array(jac_fn(z[:m].tolist(), z[m:].tolist())).reshape(len(exprs), sys.dim)
        step, *_ = np.linalg.lstsq(jac[:, free] / scale[:, None], -res / scale, rcond=None)
        z[free] += step
        th, p1 = theta_fn(z[:m].tolist(), z[m:].tolist())
        z = solve_xi0(sys, z, math.sqrt(max(1.0 + th, 0.0)) * p1)
        if np.max(np.abs(res) / scale) <= 1e-12 and np.max(np.abs(step)) <= tol:
            break
    return z


def tangent_search(sys: SymbolSystem, analysis: TransitionAnalysis | None = None,
                   seed_t: float = 1e-3, end_t: float = 0.05, forward_t: float | None = None,
                   rtol: float = RTOL, atol: float = 1e-14,
                   user_functions: Mapping[str, Expr] | None = None,
                   window: tuple[float, float] | None = None) -> TangentSearchResult:
    """Follow the tangent bicharacteristic from its leading-order asymptotics.

    The seed is placed at t = ``seed_t`` and integrated away from the base
    point (decreasing s) to t = ``end_t``; along that direction the
    linearized reduced system damps seeding errors.  A short leg toward the
    base point (to ``forward_t``, default seed_t/3) is appended.  Orders are
    fitted in |x0| (or t) over ``window`` (default one decade starting at
    twice the seed).
    """
    if analysis is None:
        analysis = transition_invariants(sys)
    if not analysis.exists_tangent:
        raise PreconditionError("kappa^2 - 4 nu <= 0: no tangent bicharacteristic predicted")
    forward_t = forward_t if forward_t is not None else seed_t / 3.0
    z0 = _seed(sys, analysis, seed_t)
    try:
        back = integrate(sys, z0, (1.0 / seed_t, 1.0 / end_t), rtol=rtol, atol=atol)
        fwd = integrate(sys, z0, (1.0 / seed_t, 1.0 / forward_t), rtol=rtol, atol=atol)
    except IntegrationError as exc:
        raise TangentSearchError(f"integration failed: {exc}") from exc
    traj = back.merged(fwd)
    absc, name = _abscissa(traj, "auto")
    if name == "x0":
        traj = traj.reparametrize_by_x0()
    if window is None:
        lead_scale = abs(analysis.leading["x0"]) if name == "x0" else 1.0
        window = (2.0 * seed_t * lead_scale, 20.0 * seed_t * lead_scale)
    funcs: dict[str, Expr] = {f"phi{j}": f for j, f in enumerate(sys.phis, start=1)}
    funcs["xi0"] = xi(0)
    funcs["theta"] = sys.theta_expr
    for k, v in (user_functions or {}).items():
        funcs[k] = parse(v, n=sys.n) if isinstance(v, str) else as_expr(v)
    orders, limits, errors = {}, {}, {}
    for key, f in funcs.items():
        vals = traj.evaluate(f)
        try:
            orders[key] = vanishing_order(traj, f, window, name, values=vals)
        except VanishingOrderError as exc:
            orders[key] = math.nan
            errors[key] = str(exc)
    for j in (1, 2):
        limits[f"phi{j}/x0^{j + 1}"] = limit_estimate(traj, sys.phis[j - 1], j + 1, name)
    tangent = (abs(orders.get("phi1", math.nan) - 2.0) <= ORDER_SLACK
               and abs(orders.get("phi2", math.nan) - 3.0) <= ORDER_SLACK
               and orders.get("xi0", math.nan) >= 2.0 - ORDER_SLACK)
    msg = "; ".join(f"{k}: {v}" for k, v in errors.items())
    return TangentSearchResult(trajectory=traj, orders=orders, limits=limits,
                               p_drift=traj.p_drift(), seed_t=seed_t, window=tuple(window),
                               abscissa=name, tangent=bool(tangent), message=msg)
