"""Normal-form bracket conditions and the pointwise normal-form reduction.

A symbol is in normal form when, writing p = -(xi0 + phi1)(xi0 - phi1) +
theta phi1^2 + phi2^2 + ... + phid^2 and r = rank of the bracket matrix,

* {phi_i, phi_j} vanishes on Sigma' for j > r,
* {xi0 - phi1, phi_j} vanishes on Sigma' for all j,
* {phi1, phi2} != 0 at the base point,
* {phi2, phi_j} vanishes on Sigma' for 3 <= j <= r and the block
  ({phi_i, phi_j})_{3<=i,j<=r} is nonsingular at the base point.

Sigma' is the zero set of phi_1..phi_d (xi0 free); "vanishes on Sigma'" is
tested numerically at projected sample points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .expr import Expr, PhasePoint, as_expr, compile_exprs, const, poisson, xi
from .spectral import (DegenerateConfiguration, SigmaError, SymbolSystem, bracket_matrix,
                       project)

__all__ = [
    "NormalFormCertificate", "PointwiseFrame", "NotTransitionPoint", "ExtensionReport",
    "verify_normal_form", "kakikae_rewrite", "theta_hat_map", "frame_from_brackets",
    "pointwise_normal_form", "extension_check", "off_sigma_order", "project_sigma_prime",
]

NF_TOL = 1e-8
NONDEGENERACY_FLOOR = 1e-8


class NotTransitionPoint(ValueError):
    """Every kernel vector of the bracket matrix has zero xi0-entry."""


# ---------------------------------------------------------------------------
# verification

@dataclass
class NormalFormCertificate:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    r: int
    tol: float
    floor: float
    samples: int

    @property
    def verdict(self) -> bool:
        return (self.c1 <= self.tol and self.c2 <= self.tol and self.c4 <= self.tol
                and self.c3 > self.floor and self.c5 > self.floor)

    def as_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3, "c4": self.c4, "c5": self.c5,
                "r": self.r, "tol": self.tol, "floor": self.floor, "samples": self.samples,
                "verdict": self.verdict}


def project_sigma_prime(sys: SymbolSystem, points: Sequence[PhasePoint]) -> list[PhasePoint]:
    """Project each point onto Sigma' = {phi_1 = ... = phi_d = 0}."""
    out = []
    for pt in points:
        q = project(sys, pt, include_xi0=False)
        out.append(q)
    return out


def _grad_scale(sys: SymbolSystem, pt: PhasePoint) -> float:
    jac = sys.jacobian(pt)
    return max(1.0, float(np.max(np.linalg.norm(jac, axis=1))))


def verify_normal_form(sys: SymbolSystem, samples: Sequence[PhasePoint],
                       tol: float = NF_TOL, floor: float = NONDEGENERACY_FLOOR,
                       r: int | None = None) -> NormalFormCertificate:
    """Residual sups of the normal-form conditions over Sigma' samples.

    Samples are projected onto Sigma' first.  Residuals are divided by the
    local gradient scale of the phi's before being compared with ``tol``.
    """
    base = sys.base_point
    b0 = sys.raw_brackets(base)
    d = sys.d
    if r is None:
        r = sys.r if sys.r is not None else linalg.numeric_rank(b0, warn=False)
    pts = project_sigma_prime(sys, samples)
    # {xi0 - phi1, phi_j} is the difference of rows 0 and 1 of the bracket matrix
    c1 = c2 = c4 = 0.0
    for pt in pts:
        b = sys.raw_brackets(pt)
        g = _grad_scale(sys, pt)
        if r < d:
            c1 = max(c1, float(np.max(np.abs(b[:, r + 1:]))) / g)
        c2 = max(c2, float(np.max(np.abs(b[0, :] - b[1, :]))) / g)
        if r >= 3 and d >= 3:
            c4 = max(c4, float(np.max(np.abs(b[2, 3:r + 1]))) / g)
    c3 = abs(float(b0[1, 2])) if d >= 2 else 0.0
    if r >= 4:
        c5 = abs(float(np.linalg.det(b0[3:r + 1, 3:r + 1])))
    else:
        c5 = 1.0
    return NormalFormCertificate(c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, r=int(r), tol=tol,
                                 floor=floor, samples=len(pts))


# ---------------------------------------------------------------------------
# theta rewrites

def kakikae_rewrite(theta, nu, samples: Sequence[PhasePoint] | None = None,
                    floor: float = 1e-12) -> tuple[Expr, Expr]:
    """Rescale phi1 by (1 + nu); return (1 + nu, new theta).

    -(xi0 + phi1)(xi0 - phi1) + theta phi1^2 is unchanged when phi1 becomes
    (1 + nu) phi1 and theta becomes (theta - nu^2 - 2 nu)/(1 + nu)^2.
    ``samples`` (optional) are used to check that 1 + nu stays away from 0.
    """
    theta = as_expr(theta)
    nu = as_expr(nu)
    scale = const(1.0) + nu
    if samples:
        fn = compile_exprs((scale,))
        for pt in samples:
            v = fn(pt.x.tolist(), pt.xi.tolist())[0]
            if abs(v) <= floor:
                raise ValueError(f"1 + nu vanishes at {pt!r}")
    theta_hat = (theta - nu * nu - const(2.0) * nu) / (scale * scale)
    return scale, theta_hat


def theta_hat_map(theta: float) -> float:
    """-theta / (sqrt(1 + theta) + 1 + theta); flips the sign of theta."""
    if not 1.0 + theta > 0.0:
        raise ValueError(f"1 + theta must be positive, got {1.0 + theta!r}")
    return -theta / (math.sqrt(1.0 + theta) + 1.0 + theta)


def off_sigma_order(sys: SymbolSystem, f: Expr, rho: PhasePoint, rng=None,
                    eps: Sequence[float] | None = None, directions: int = 3) -> float:
    """Fitted vanishing order of ``f`` in the distance to Sigma' at ``rho``.

    Walks away from Sigma' along directions spanned by the gradients of the
    phi's and fits log|f| against log(distance).  Returns the smallest fitted
    slope over the directions tried (inf when f vanishes identically there).
    """
    rho = project(sys, rho, include_xi0=False)
    eps = np.asarray(eps if eps is not None else np.logspace(-4, -1.5, 11))
    fn = compile_exprs((as_expr(f),))
    jac = sys.jacobian(rho)[1:]
    z0 = rho.vector()
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    worst = math.inf
    for _ in range(directions):
        c = rng.normal(size=jac.shape[0])
        v = jac.T @ c
        v /= np.linalg.norm(v)
        vals = []
        for e in eps:
            pt = PhasePoint.from_vector(z0 + e * v)
            vals.append(abs(fn(pt.x.tolist(), pt.xi.tolist())[0]))
        vals = np.array(vals)
        if np.all(vals <= 1e-300):
            continue
        good = vals > 1e-300
        slope = np.polyfit(np.log(eps[good]), np.log(vals[good]), 1)[0]
        worst = min(worst, float(slope))
    return worst


# ---------------------------------------------------------------------------
# pointwise normal form

@dataclass
class PointwiseFrame:
    """Orthogonal stages taking the (effective) phi's to normal form at a point.

    ``orth`` maps effective functions e (e_1 = sqrt(1 + theta) phi_1 when the
    system carries a theta) to e~ = orth @ e.  The normal-form functions are
    phi~_1 = |alpha| e~_1 and phi~_j = e~_j, with theta~ = (1 - |alpha|^2)/|alpha|^2.
    """

    kernel_split: np.ndarray
    alpha_stage: np.ndarray
    align_stage: np.ndarray
    beta_stage: np.ndarray
    orth: np.ndarray
    alpha: np.ndarray
    r: int
    theta: float
    brackets: np.ndarray
    effective_scale: float = 1.0
    checks: dict = field(default_factory=dict)

    @property
    def alpha_norm(self) -> float:
        return float(np.linalg.norm(self.alpha))

    @property
    def coefficients(self) -> np.ndarray:
        """Rows express the normal-form phi~_j in terms of the original phi_k."""
        d = self.orth.shape[0]
        left = np.eye(d)
        left[0, 0] = self.alpha_norm
        right = np.eye(d)
        right[0, 0] = self.effective_scale
        return left @ self.orth @ right

    @property
    def delta(self) -> float:
        return float(self.brackets[1, 2])

    def transform(self, phi_values: np.ndarray) -> np.ndarray:
        return self.coefficients @ np.asarray(phi_values, dtype=float)

    def quadratic_form(self, phi_values: np.ndarray) -> float:
        """(1 + theta~) phi~_1^2 + sum_j phi~_j^2 at the given phi values."""
        t = self.transform(phi_values)
        return float((1.0 + self.theta) * t[0] ** 2 + np.sum(t[1:] ** 2))


def _embed(block: np.ndarray, size: int, start: int) -> np.ndarray:
    out = np.eye(size)
    k = block.shape[0]
    out[start:start + k, start:start + k] = block
    return out


def frame_from_brackets(b: np.ndarray, r: int | None = None, floor: float = 1e-8,
                        effective_scale: float = 1.0) -> PointwiseFrame:
    """Run the normal-form stages on a bracket matrix ({phi_i, phi_j})_{0..d}."""
    b = np.asarray(b, dtype=float)
    d = b.shape[0] - 1
    if d < 2:
        raise DegenerateConfiguration("need at least two phi's")
    if r is None:
        r = linalg.numeric_rank(b, warn=False)
    if r < 2:
        raise DegenerateConfiguration(f"bracket rank {r} < 2")
    ker = linalg.null_space(b)
    if ker.shape[1] != d + 1 - r:
        raise DegenerateConfiguration(f"kernel dimension {ker.shape[1]} != {d + 1 - r}")
    firsts = ker[0, :]
    if np.max(np.abs(firsts)) <= floor:
        raise NotTransitionPoint("no kernel vector has a nonzero xi0-entry")
    # v0 = (1, v0'): the combination xi0 + v0'.phi commutes with everything
    j0 = int(np.argmax(np.abs(firsts)))
    v0 = ker[:, j0] / firsts[j0]
    rest = [ker[:, j] - ker[0, j] * v0 for j in range(ker.shape[1]) if j != j0]

    # stage 1: orthonormal kernel directions go last
    if rest:
        kdir = np.linalg.qr(np.array(rest)[:, 1:].T)[0].T
        comp = linalg.null_space(kdir)
        p1 = np.vstack([comp.T, kdir])
    else:
        p1 = np.eye(d)
    b1 = _conj(b, p1)

    # stage 2: first row -alpha/|alpha|; alpha read off the kernel vector
    alpha = (p1 @ v0[1:])[:r]
    if np.linalg.norm(alpha) == 0.0:
        raise DegenerateConfiguration("alpha = 0")
    t1 = linalg.orthonormal_completion(-alpha / np.linalg.norm(alpha))
    st2 = _embed(t1, d, 0)
    b2 = _conj(b1, st2)
    a1 = b2[1:r + 1, 1:r + 1]
    if abs(np.linalg.det(a1)) <= floor ** 2:
        raise DegenerateConfiguration("A_1 is singular")

    # stage 3: align ({phi1, phi_j})_{j=2..r} with the phi2 direction
    row = b2[1, 2:r + 1]
    if np.linalg.norm(row) <= floor:
        raise NotTransitionPoint("{phi1, phi_j} vanish for 2 <= j <= r")
    st3 = _embed(linalg.orthonormal_completion(row / np.linalg.norm(row)), d, 1)
    b3 = _conj(b2, st3)

    # stage 4: phi2 direction along the kernel of A_2
    st4 = np.eye(d)
    if r > 2:
        a2 = b3[2:r + 1, 2:r + 1]
        kb = linalg.null_space(a2)
        if kb.shape[1] != 1:
            raise DegenerateConfiguration(f"ker A_2 has dimension {kb.shape[1]}, expected 1")
        beta = kb[:, 0]
        if beta[0] < 0:
            beta = -beta
        if abs(beta[0]) <= floor:
            raise DegenerateConfiguration("beta_2 = 0")
        st4 = _embed(linalg.orthonormal_completion(beta), d, 1)
    orth = st4 @ st3 @ st2 @ p1
    na = float(np.linalg.norm(alpha))
    theta = (1.0 - na * na) / (na * na)
    scale = np.eye(d + 1)
    scale[1, 1] = na
    full = scale @ _embed(orth, d + 1, 1)
    bn = full @ b @ full.T
    frame = PointwiseFrame(kernel_split=p1, alpha_stage=t1, align_stage=st3[1:, 1:],
                           beta_stage=st4[1:, 1:], orth=orth, alpha=alpha, r=int(r),
                           theta=theta, brackets=bn, effective_scale=effective_scale)
    frame.checks = _frame_checks(bn, r)
    return frame


def _conj(b: np.ndarray, q: np.ndarray) -> np.ndarray:
    full = _embed(q, b.shape[0], 1)
    return full @ b @ full.T


def _frame_checks(bn: np.ndarray, r: int) -> dict:
    d = bn.shape[0] - 1
    out = {
        "xi0_minus_phi1": float(np.max(np.abs(bn[0, :] - bn[1, :]))),
        "phi2_rows": float(np.max(np.abs(bn[2, 3:r + 1]))) if r >= 3 else 0.0,
        "delta": float(bn[1, 2]),
        "det_A3": float(np.linalg.det(bn[3:r + 1, 3:r + 1])) if r >= 4 else 1.0,
        "outside_block": float(np.max(np.abs(bn[:, r + 1:]))) if r < d else 0.0,
    }
    return out


def pointwise_normal_form(sys: SymbolSystem, rho: PhasePoint | None = None,
                          floor: float = 1e-8) -> PointwiseFrame:
    """Normal-form frame at ``rho`` (default: the base point).

    Works with the effective functions, so a symbol that already carries a
    theta is reduced relative to its own sum of squares.
    """
    rho = (rho if rho is not None else sys.base_point).normalized()
    if np.max(np.abs(sys.eval_functions(rho))) > 1e-8:
        raise SigmaError("pointwise_normal_form needs a point on Sigma")
    b = bracket_matrix(sys, rho)
    scale = 1.0
    if sys.theta is not None:
        scale = math.sqrt(1.0 + sys.eval_theta(rho))
    return frame_from_brackets(b, sys.r, floor, effective_scale=scale)


# ---------------------------------------------------------------------------
# extension conditions

@dataclass
class ExtensionReport:
    phi1_fit_residual: float
    phi2_fit_residual: float
    higher_residual: float
    theta_range: tuple
    tilde_range: tuple
    in_range: bool
    tol: float

    @property
    def ok(self) -> bool:
        return (self.phi1_fit_residual <= self.tol and self.phi2_fit_residual <= self.tol
                and self.higher_residual <= self.tol and self.in_range)

    def as_dict(self) -> dict:
        return {"phi1_fit_residual": self.phi1_fit_residual,
                "phi2_fit_residual": self.phi2_fit_residual,
                "higher_residual": self.higher_residual,
                "theta_range": list(self.theta_range), "tilde_range": list(self.tilde_range),
                "in_range": self.in_range, "tol": self.tol, "ok": self.ok}


def _fit_residual(target: np.ndarray, basis: np.ndarray, coords: np.ndarray) -> float:
    """Relative sup residual of target ~ sum_k c_k(z) basis_k with c_k affine in z."""
    if np.max(np.abs(target)) == 0.0:
        return 0.0
    feats = [basis[:, k:k + 1] * np.hstack([np.ones((coords.shape[0], 1)), coords])
             for k in range(basis.shape[1])]
    design = np.hstack(feats)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    res = target - design @ coef
    return float(np.max(np.abs(res)) / max(1.0, np.max(np.abs(target))))


def extension_check(sys: SymbolSystem, theta_tilde, samples: Sequence[PhasePoint],
                    tol: float = 1e-8, r: int | None = None,
                    range_margin: float = 0.25) -> ExtensionReport:
    """Check a candidate extension theta~ of theta.

    {phi1, theta~} should lie in the span of (phi1, phi2), {phi2, theta~} in
    the span of phi2 (coefficients fitted as affine functions over the
    samples), {phi_j, theta~} should vanish on Sigma' for 3 <= j <= r, and
    theta~ should stay within the range of theta on the samples, widened by
    ``range_margin`` times its spread (theta~ at one sample is theta at some
    other point, which the sample set need not contain).
    """
    tt = as_expr(theta_tilde)
    d = sys.d
    if r is None:
        r = sys.r if sys.r is not None else linalg.numeric_rank(sys.raw_brackets(sys.base_point),
                                                                 warn=False)
    exprs = [poisson(sys.phis[0], tt), poisson(sys.phis[1], tt)]
    exprs += [poisson(sys.phis[j - 1], tt) for j in range(3, r + 1)]
    exprs += [tt, sys.theta_expr]
    fn = compile_exprs(exprs)
    rows, phis, coords = [], [], []
    for pt in samples:
        rows.append(fn(pt.x.tolist(), pt.xi.tolist()))
        phis.append(sys.eval_functions(pt)[1:3])
        coords.append(pt.vector())
    rows = np.array(rows)
    phis = np.array(phis)
    coords = np.array(coords)
    res1 = _fit_residual(rows[:, 0], phis[:, :2], coords)
    res2 = _fit_residual(rows[:, 1], phis[:, 1:2], coords)
    higher = 0.0
    if r >= 3:
        hfn = compile_exprs(exprs[2:2 + r - 2])
        for pt in project_sigma_prime(sys, samples):
            vals = hfn(pt.x.tolist(), pt.xi.tolist())
            higher = max(higher, max(abs(v) for v in vals))
    th_rng = (float(np.min(rows[:, -1])), float(np.max(rows[:, -1])))
    tt_rng = (float(np.min(rows[:, -2])), float(np.max(rows[:, -2])))
    slack = range_margin * (th_rng[1] - th_rng[0]) + tol * max(1.0, abs(th_rng[0]), abs(th_rng[1]))
    in_range = th_rng[0] - slack <= tt_rng[0] and tt_rng[1] <= th_rng[1] + slack
    return ExtensionReport(phi1_fit_residual=res1, phi2_fit_residual=res2,
                           higher_residual=float(higher), theta_range=th_rng,
                           tilde_range=tt_rng, in_range=bool(in_range), tol=tol)
