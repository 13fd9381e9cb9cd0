"""Hamilton map at double points, W(rho), bracket linear algebra and theta.

A :class:`SymbolSystem` describes

    p = -xi0^2 + (1 + theta) phi_1^2 + phi_2^2 + ... + phi_d^2 + R

(``theta`` and ``R`` optional).  On the double characteristic set the
bracket pipeline works with the *effective* functions
``sqrt(1+theta) phi_1, phi_2, ..., phi_d`` so that p is a plain sum of
squares there; this is what makes theta recoverable from brackets alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import linalg
from .expr import (Expr, PhasePoint, as_expr, bind, compile_exprs, const, gradient,
                   poisson, xi)

__all__ = [
    "SymbolSystem", "BracketTable", "SpectralReport", "SigmaError",
    "DegenerateConfiguration", "RankMismatch", "InconsistencyError", "NotApplicable",
    "sigma_residual", "on_sigma", "project", "sample_sigma",
    "fundamental_matrix", "spectrum", "w_dim", "bracket_matrix", "bracket_table",
    "theta_at", "classify", "product_identity_check", "reduced_bracket_check",
    "trace_plus", "THETA_TOL", "SIGMA_TOL",
]

THETA_TOL = 1e-7
SIGMA_TOL = 1e-8
ALPHA_ONE_TOL = 1e-8
CHECK_BAND = 1e-4


class SigmaError(ValueError):
    """Point is not on the double characteristic set (or projection failed)."""


class DegenerateConfiguration(ValueError):
    """Bracket data does not support the M alpha = a construction."""


class RankMismatch(ValueError):
    """Computed bracket rank differs from the declared one."""


class InconsistencyError(RuntimeError):
    """theta-based and spectrum-based labels disagree."""


class NotApplicable(ValueError):
    """An identity was requested outside its hypotheses."""


class SymbolSystem:
    """Symbol data: dimension ``n``, functions ``phis`` and optional theta, R."""

    def __init__(self, n: int, phis: Sequence[Expr], theta: Expr | None = None,
                 remainder: Expr | None = None, base_point: PhasePoint | None = None,
                 r: int | None = None, name: str = "", extras: Mapping[str, Expr] | None = None,
                 params: Mapping[str, float] | None = None):
        if n < 1:
            raise ValueError("n must be >= 1")
        if not phis:
            raise ValueError("at least one phi is required")
        self.n = int(n)
        self.phis = tuple(bind(as_expr(f), n) for f in phis)
        self.theta = None if theta is None else bind(as_expr(theta), n)
        self.remainder = None if remainder is None else bind(as_expr(remainder), n)
        self.base_point = base_point if base_point is not None else PhasePoint.base(n)
        if self.base_point.n != n:
            raise ValueError("base point dimension does not match n")
        self.r = r
        self.name = name
        self.extras = {k: bind(as_expr(v), n) for k, v in (extras or {}).items()}
        self.params = dict(params or {})
        for e in self._all_exprs():
            for kind, idx in _free(e):
                if idx != "n" and idx > n:
                    raise ValueError(f"expression uses {kind}{idx} beyond n={n}")

    def _all_exprs(self):
        out = list(self.phis)
        if self.theta is not None:
            out.append(self.theta)
        if self.remainder is not None:
            out.append(self.remainder)
        out.extend(self.extras.values())
        return out

    def __repr__(self):
        return f"SymbolSystem(name={self.name!r}, n={self.n}, d={self.d})"

    @property
    def d(self) -> int:
        return len(self.phis)

    @property
    def dim(self) -> int:
        """Phase-space dimension 2(n+1)."""
        return 2 * (self.n + 1)

    @cached_property
    def functions(self) -> tuple[Expr, ...]:
        """(phi_0 = xi_0, phi_1, ..., phi_d)."""
        return (xi(0),) + self.phis

    @cached_property
    def p(self) -> Expr:
        head = self.phis[0] ** 2
        if self.theta is not None:
            head = (const(1.0) + self.theta) * head
        out = -xi(0) ** 2 + head
        for f in self.phis[1:]:
            out = out + f ** 2
        if self.remainder is not None:
            out = out + self.remainder
        return out

    @cached_property
    def theta_expr(self) -> Expr:
        return self.theta if self.theta is not None else const(0.0)

    # compiled helpers --------------------------------------------------
    @cached_property
    def _sigma_fn(self):
        return compile_exprs(self.functions)

    @cached_property
    def _sigma_jac_fn(self):
        rows = [g for f in self.functions for g in gradient(f, self.n)]
        return compile_exprs(rows)

    @cached_property
    def _hess_fn(self):
        grad = gradient(self.p, self.n)
        m = self.dim
        entries = []
        for i in range(m):
            gi = gradient(grad[i], self.n)
            entries.extend(gi[i:])
        return compile_exprs(entries)

    @cached_property
    def bracket_exprs(self) -> dict:
        """{(i, j): {phi_i, phi_j}} for 0 <= i < j <= d."""
        fs = self.functions
        return {(i, j): poisson(fs[i], fs[j]) for i in range(len(fs)) for j in range(i + 1, len(fs))}

    @cached_property
    def _bracket_fn(self):
        keys = sorted(self.bracket_exprs)
        return keys, compile_exprs([self.bracket_exprs[k] for k in keys])

    @cached_property
    def _theta_fn(self):
        return compile_exprs((self.theta_expr,))

    def eval_functions(self, rho: PhasePoint) -> np.ndarray:
        return np.array(self._sigma_fn(rho.x.tolist(), rho.xi.tolist()))

    def eval_theta(self, rho: PhasePoint) -> float:
        return float(self._theta_fn(rho.x.tolist(), rho.xi.tolist())[0])

    def jacobian(self, rho: PhasePoint) -> np.ndarray:
        """Rows: gradients of xi_0, phi_1..phi_d in (x, xi) order."""
        vals = self._sigma_jac_fn(rho.x.tolist(), rho.xi.tolist())
        return np.array(vals).reshape(self.d + 1, self.dim)

    def hessian(self, rho: PhasePoint) -> np.ndarray:
        vals = self._hess_fn(rho.x.tolist(), rho.xi.tolist())
        m = self.dim
        h = np.zeros((m, m))
        k = 0
        for i in range(m):
            for j in range(i, m):
                h[i, j] = h[j, i] = vals[k]
                k += 1
        return h

    def raw_brackets(self, rho: PhasePoint) -> np.ndarray:
        """Skew matrix ({phi_i, phi_j}(rho)), 0 <= i, j <= d, no theta scaling."""
        keys, fn = self._bracket_fn
        vals = fn(rho.x.tolist(), rho.xi.tolist())
        b = np.zeros((self.d + 1, self.d + 1))
        for (i, j), v in zip(keys, vals):
            b[i, j] = v
            b[j, i] = -v
        return b

    def with_phis(self, phis, theta=None, name=None) -> "SymbolSystem":
        return SymbolSystem(self.n, phis, theta=theta, remainder=self.remainder,
                            base_point=self.base_point, r=self.r,
                            name=name or self.name, extras=self.extras, params=self.params)


def _free(e):
    from .expr import free_vars
    return free_vars(e)


# Sigma membership / projection -----------------------------------------

def sigma_residual(sys: SymbolSystem, rho: PhasePoint) -> np.ndarray:
    """(xi_0, phi_1, ..., phi_d) at the normalized point."""
    return sys.eval_functions(rho.normalized())


def on_sigma(sys: SymbolSystem, rho: PhasePoint, tol: float = SIGMA_TOL) -> bool:
    return bool(np.max(np.abs(sigma_residual(sys, rho))) <= tol)


def project(sys: SymbolSystem, rho: PhasePoint, frozen: Sequence[int] = (),
            include_xi0: bool = True, tol: float = 1e-13, max_iter: int = 60) -> PhasePoint:
    """Gauss-Newton projection onto Sigma (or Sigma' when ``include_xi0=False``).

    ``frozen`` lists coordinates (indices into the (x, xi) vector) kept fixed.
    Steps are minimum-norm least-squares solves.  The result has |xi'| = 1.
    """
    z = rho.normalized().vector()
    m = sys.dim
    free = np.array([i for i in range(m) if i not in set(frozen)])
    rows = slice(0, None) if include_xi0 else slice(1, None)
    for _ in range(max_iter):
        pt = PhasePoint.from_vector(z)
        res = sys.eval_functions(pt)[rows]
        if np.max(np.abs(res)) <= tol:
            break
        jac = sys.jacobian(pt)[rows][:, free]
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        z = z.copy()
        z[free] += step
        if not np.all(np.isfinite(z)):
            raise SigmaError("projection diverged")
        zpt = PhasePoint.from_vector(z)
        if 2 * sys.n + 1 not in set(frozen):
            zpt = zpt.normalized()
        z = zpt.vector()
    else:
        pt = PhasePoint.from_vector(z)
        res = sys.eval_functions(pt)[rows]
        if np.max(np.abs(res)) > 1e3 * tol:
            raise SigmaError(f"projection did not converge (residual {np.max(np.abs(res)):.3e})")
    return PhasePoint.from_vector(z)


def sample_sigma(sys: SymbolSystem, rng: np.random.Generator, count: int, box: float = 0.2,
                 fixed: Mapping[int, float] | None = None, include_xi0: bool = True,
                 max_tries: int | None = None) -> list[PhasePoint]:
    """Random points near the base point, projected onto Sigma.

    ``fixed`` pins coordinates (index into the (x, xi) vector -> value) before
    projection; they are frozen during the Gauss-Newton iteration.
    """
    fixed = dict(fixed or {})
    base = sys.base_point.vector()
    out: list[PhasePoint] = []
    tries = 0
    max_tries = max_tries or 20 * count
    while len(out) < count:
        tries += 1
        if tries > max_tries:
            raise SigmaError(f"only {len(out)} of {count} samples projected successfully")
        z = base + rng.uniform(-box, box, size=base.size)
        for i, v in fixed.items():
            z[i] = v
        try:
            pt = project(sys, PhasePoint.from_vector(z), frozen=tuple(fixed), include_xi0=include_xi0)
        except (SigmaError, ValueError, ArithmeticError):
            continue
        if np.max(np.abs(pt.x - sys.base_point.x)) > 2.5 * box:
            continue
        out.append(pt)
    return out


# Hamilton map -----------------------------------------------------------

def _symplectic_j(n: int) -> np.ndarray:
    m = n + 1
    j = np.zeros((2 * m, 2 * m))
    j[:m, m:] = np.eye(m)
    j[m:, :m] = -np.eye(m)
    return j


def fundamental_matrix(sys: SymbolSystem, rho: PhasePoint, tol: float = SIGMA_TOL) -> np.ndarray:
    """F_p(rho) = J (Hess p / 2), with J mapping dp to the Hamilton field."""
    rho = rho.normalized()
    res = sys.eval_functions(rho)
    if np.max(np.abs(res)) > tol:
        raise SigmaError(f"point not on Sigma (max residual {np.max(np.abs(res)):.3e})")
    return _symplectic_j(sys.n) @ (0.5 * sys.hessian(rho))


def spectrum(f: np.ndarray) -> np.ndarray:
    """Eigenvalues with multiplicity (in-repo Hessenberg + shifted QR)."""
    return linalg.eigvals(f)


def w_dim(f: np.ndarray, rtol: float = linalg.RANK_RTOL) -> int:
    """dim(Ker F^2 cap Im F^2) = rank F^2 - rank(F^2 restricted to Im F^2)."""
    f = np.asarray(f, dtype=float)
    f2 = f @ f
    sv = linalg.singular_values(f2)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    scale = float(sv[0])
    u, s, _ = np.linalg.svd(f2)
    k = linalg.numeric_rank(f2, rtol, scale=scale)
    if k == 0:
        return 0
    image = u[:, :k]
    return k - linalg.numeric_rank(f2 @ image, rtol, scale=scale)


def trace_plus(f_or_eigs) -> float:
    """Sum of the positive imaginary parts of the spectrum."""
    arr = np.asarray(f_or_eigs)
    eigs = spectrum(arr) if arr.ndim == 2 else arr.astype(complex)
    return float(np.sum(np.clip(eigs.imag, 0.0, None)))


# bracket pipeline -------------------------------------------------------

@dataclass
class BracketTable:
    """Bracket data at one point (effective functions, see module docstring)."""

    A: np.ndarray
    r: int
    a: np.ndarray
    M: np.ndarray
    alpha: np.ndarray
    delta: float
    basis: np.ndarray
    residual: float

    @property
    def alpha_norm(self) -> float:
        return float(np.linalg.norm(self.alpha))


def bracket_matrix(sys: SymbolSystem, rho: PhasePoint) -> np.ndarray:
    """({phi_i, phi_j}(rho)) for the effective functions at a point of Sigma'."""
    rho = rho.normalized()
    b = sys.raw_brackets(rho)
    if sys.theta is not None:
        t = sys.eval_theta(rho)
        if 1.0 + t <= 0.0:
            raise DegenerateConfiguration(f"1 + theta = {1.0 + t:.3e} is not positive")
        s = math.sqrt(1.0 + t)
        b[1, :] *= s
        b[:, 1] *= s
    return b


def _table_from_brackets(b: np.ndarray, declared_r: int | None = None,
                         rtol: float = linalg.RANK_RTOL) -> BracketTable:
    d = b.shape[0] - 1
    r = linalg.numeric_rank(b, rtol)
    if declared_r is not None and declared_r != r:
        raise RankMismatch(f"declared r={declared_r} but bracket matrix has rank {r}")
    if r == 0:
        raise DegenerateConfiguration("all brackets vanish (r = 0)")
    # split phi-space into the part commuting with everything and its complement
    kernel = linalg.null_space(b[:, 1:], rtol)
    if kernel.shape[1] != d - r:
        raise DegenerateConfiguration(
            f"kernel of the phi-block has dimension {kernel.shape[1]}, expected {d - r}")
    if kernel.shape[1]:
        comp = linalg.null_space(kernel.T, rtol)
    else:
        comp = np.eye(d)
    m = comp.T @ b[1:, 1:] @ comp
    a = b[0, 1:] @ comp
    try:
        alpha = np.linalg.solve(m, a)
    except np.linalg.LinAlgError:
        raise DegenerateConfiguration("M is singular") from None
    resid = float(np.linalg.norm(m @ alpha - a))
    if resid > 1e-10 * max(1.0, float(np.linalg.norm(a))):
        raise DegenerateConfiguration(f"M alpha = a residual {resid:.3e}")
    delta = float(b[1, 2]) if d >= 2 else 0.0
    return BracketTable(A=b, r=r, a=a, M=m, alpha=alpha, delta=delta, basis=comp, residual=resid)


def bracket_table(sys: SymbolSystem, rho: PhasePoint, tol: float = SIGMA_TOL) -> BracketTable:
    rho = rho.normalized()
    if not on_sigma(sys, rho, tol):
        raise SigmaError("bracket_table needs a point on Sigma")
    return _table_from_brackets(bracket_matrix(sys, rho), sys.r)


def _theta_from_table(tab: BracketTable, snap: float = ALPHA_ONE_TOL) -> float:
    na = tab.alpha_norm
    if na == 0.0:
        raise DegenerateConfiguration("alpha = 0 (a vanishes): theta undefined")
    if abs(na - 1.0) <= snap:
        return 0.0
    return (1.0 - na * na) / (na * na)


def theta_at(sys: SymbolSystem, rho: PhasePoint, snap: float = ALPHA_ONE_TOL) -> float:
    """theta = (1 - |alpha|^2)/|alpha|^2 from M alpha = a.

    ``||alpha| - 1| <= snap`` is reported as exactly 0; pass ``snap=0`` for
    the raw quotient.
    """
    return _theta_from_table(bracket_table(sys, rho), snap)


# classification -----------------------------------------------------------

@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    dim_w: int
    theta: float
    alpha_norm: float
    trace_plus: float
    label: str
    spectral_label: str
    consistent: bool
    r: int
    point: PhasePoint = field(repr=False, default=None)


def _label_from_theta(theta: float, tol: float) -> str:
    if theta > tol:
        return "type1"
    if theta < -tol:
        return "effective"
    return "type2"


def _nonzero(eigs: np.ndarray, count: int) -> np.ndarray:
    order = np.argsort(-np.abs(eigs), kind="stable")
    return eigs[order[:count]]


def spectral_label(eigs: np.ndarray, dim_w: int, r: int, scale: float) -> str:
    """Label from the spectrum: a real pair among the r dominant eigenvalues."""
    top = _nonzero(eigs, r)
    real_pair = any(abs(z.real) > 1e-6 * scale and abs(z.imag) <= 1e-6 * scale for z in top)
    if real_pair:
        return "effective"
    return "type2" if dim_w > 0 else "type1"


def classify(sys: SymbolSystem, rho: PhasePoint, tol: float = THETA_TOL,
             check_band: float = CHECK_BAND) -> SpectralReport:
    """Label rho as effective / type1 / type2 from the sign of theta.

    The spectrum of F_p gives an independent label.  Disagreement raises
    :class:`InconsistencyError` when |theta| >= ``check_band`` (close to the
    transition the Jordan structure makes the spectral label ill-conditioned).
    """
    rho = rho.normalized()
    tab = bracket_table(sys, rho)
    theta = _theta_from_table(tab)
    f = fundamental_matrix(sys, rho)
    eigs = spectrum(f)
    dw = w_dim(f)
    scale = max(1.0, float(np.linalg.norm(f, 2)))
    label = _label_from_theta(theta, tol)
    slabel = spectral_label(eigs, dw, tab.r, scale)
    ok = slabel == label
    if not ok and abs(theta) >= check_band:
        raise InconsistencyError(f"theta={theta:.6e} gives {label} but spectrum gives {slabel}")
    return SpectralReport(eigenvalues=eigs, dim_w=dw, theta=theta, alpha_norm=tab.alpha_norm,
                          trace_plus=trace_plus(eigs), label=label, spectral_label=slabel,
                          consistent=ok, r=tab.r, point=rho)


def product_identity_check(sys: SymbolSystem, rho: PhasePoint) -> float:
    """|(1-|alpha|^2) det M - prod(nonzero eigenvalues)| / max(1, |prod|)."""
    rho = rho.normalized()
    tab = bracket_table(sys, rho)
    f = fundamental_matrix(sys, rho)
    if w_dim(f) > 0:
        raise NotApplicable("W(rho) != {0}: the product identity does not apply")
    lhs = (1.0 - tab.alpha_norm ** 2) * float(np.linalg.det(tab.M))
    prod = complex(np.prod(_nonzero(spectrum(f), tab.r)))
    rhs = prod.real
    return abs(lhs - rhs) / max(1.0, abs(rhs))


def epsilon_bracket_matrix(b: np.ndarray) -> np.ndarray:
    """(eps_i {phi_j, phi_i}) with eps_0 = -1, eps_j = 1."""
    eps = np.ones(b.shape[0])
    eps[0] = -1.0
    return eps[:, None] * b.T


def reduced_bracket_check(sys: SymbolSystem, rho: PhasePoint) -> float:
    """Hausdorff distance between the nonzero spectra of F_p and of the
    epsilon-signed bracket matrix."""
    rho = rho.normalized()
    b = bracket_matrix(sys, rho)
    r = linalg.numeric_rank(b, warn=False)
    fa = spectrum(epsilon_bracket_matrix(b))
    ff = spectrum(fundamental_matrix(sys, rho))
    return linalg.hausdorff(_nonzero(ff, r), _nonzero(fa, r))
