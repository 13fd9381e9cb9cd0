"""Small dense linear algebra: nonsymmetric eigenvalues and rank decisions.

Eigenvalues go through balancing, Householder reduction to upper Hessenberg
form and the Francis double-shift QR iteration.  Matrices here are tiny
(at most 64x64), so clarity wins over blocking.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

RANK_RTOL = 1e-9
AMBIGUOUS_BAND = (1e-11, 1e-7)


class ConvergenceError(RuntimeError):
    """QR iteration hit its iteration cap."""


class RankAmbiguityWarning(UserWarning):
    """A singular value sits close to the rank cutoff."""


def balance(a: np.ndarray, radix: float = 2.0) -> np.ndarray:
    """Diagonal similarity scaling that equalises row and column norms."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    sq = radix * radix
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(a[:, i])) - abs(a[i, i])
            r = np.sum(np.abs(a[i, :])) - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sq
            g = r * radix
            while c > g:
                f /= radix
                c /= sq
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def hessenberg(a: np.ndarray) -> np.ndarray:
    """Upper Hessenberg matrix similar to ``a`` (Householder reflections)."""
    h = np.array(a, dtype=float)
    n = h.shape[0]
    for k in range(n - 2):
        v = h[k + 1:, k].copy()
        alpha = np.linalg.norm(v)
        if alpha == 0.0:
            continue
        if v[0] > 0:
            alpha = -alpha
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v /= vn
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _hqr(h: np.ndarray, max_iter: int) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix (Francis double shift)."""
    n = h.shape[0]
    # 1-based copy keeps the classical index bookkeeping readable
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = h
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = float(np.sum(np.abs(np.triu(h, -1))))
    nn = n
    t = 0.0
    x = y = z = w = p = q = r = 0.0
    while nn >= 1:
        its = 0
        while True:
            l = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1, ll - 1]) + abs(a[ll, ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll, ll - 1]) + s == s:
                    a[ll, ll - 1] = 0.0
                    l = ll
                    break
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if its >= max_iter:
                raise ConvergenceError(f"QR iteration did not converge after {its} sweeps")
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                for i in range(1, nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = min(nn, k + 3)
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
            if l >= nn - 1:
                break
    return wr[1:] + 1j * wi[1:]


def eigvals(a, max_iter: int = 120) -> np.ndarray:
    """All eigenvalues of a real square matrix, sorted for reproducibility.

    Sorted by (real part, imaginary part) after rounding noise below
    ``1e-14 * ||a||`` so that repeated runs give identical lists.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    if n > 64:
        raise ValueError("matrix dimension above 64 is not supported")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if not np.any(a):
        return np.zeros(n, dtype=complex)
    ev = _hqr(hessenberg(balance(a)), max_iter)
    return np.array(sorted(ev, key=lambda z: (round(z.real, 12), round(z.imag, 12))))


def charpoly(a) -> np.ndarray:
    """Coefficients of det(lambda - a), highest degree first (Faddeev-LeVerrier)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    coeffs = [1.0]
    m = np.zeros_like(a)
    eye = np.eye(n)
    for k in range(1, n + 1):
        m = a @ m + coeffs[-1] * eye
        coeffs.append(-np.trace(a @ m) / k)
    return np.array(coeffs)


def singular_values(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(0)
    return np.linalg.svd(a, compute_uv=False)


def numeric_rank(a, rtol: float = RANK_RTOL, scale: float | None = None,
                 warn: bool = True) -> int:
    """Rank with cutoff ``rtol * scale`` (scale defaults to sigma_max).

    Emits :class:`RankAmbiguityWarning` when a singular value falls inside
    the ambiguous band relative to the scale.
    """
    sv = singular_values(a)
    if sv.size == 0:
        return 0
    ref = float(sv[0]) if scale is None else float(scale)
    if ref == 0.0:
        return 0
    ratios = sv / ref
    if warn and np.any((ratios >= AMBIGUOUS_BAND[0]) & (ratios <= AMBIGUOUS_BAND[1])):
        warnings.warn(
            f"singular value ratio(s) {ratios[(ratios >= AMBIGUOUS_BAND[0]) & (ratios <= AMBIGUOUS_BAND[1])]} "
            f"near rank cutoff {rtol:g}", RankAmbiguityWarning, stacklevel=2)
    return int(np.sum(ratios > rtol))


def null_space(a, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical kernel of ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _, sv, vt = np.linalg.svd(a)
    ref = sv[0] if sv.size and sv[0] > 0 else 1.0
    rank = int(np.sum(sv > rtol * ref)) if sv.size and sv[0] > 0 else 0
    return vt[rank:].T.copy()


def orthonormal_completion(first: np.ndarray) -> np.ndarray:
    """Orthogonal matrix whose first row is the unit vector ``first``.

    Built from a Householder reflection, so it is deterministic.
    """
    u = np.asarray(first, dtype=float)
    u = u / np.linalg.norm(u)
    n = u.size
    e = np.zeros(n)
    e[0] = 1.0
    v = u - e
    vn = np.linalg.norm(v)
    if vn < 1e-15:
        return np.eye(n)
    v /= vn
    return np.eye(n) - 2.0 * np.outer(v, v)


def hausdorff(a, b) -> float:
    """Hausdorff distance between two finite sets of complex numbers."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return math.inf
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
