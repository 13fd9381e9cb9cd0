"""Invariant suite behind ``hypclass selftest``.

Every check returns a record {name, value, tol, pass, ...}; the suite is
deterministic for a given seed (counter-based generator, no timing data).
"""

from __future__ import annotations

import math
import warnings
from typing import Callable

import numpy as np

from . import factor, flow, normform, spectral
from .builtins import from_spec, rei2, rei2_theta_text
from .expr import Expr, PhasePoint, compile_exprs, const, evaluate, parse, poisson, x, xi
from .linalg import RankAmbiguityWarning

__all__ = ["random_polynomial", "make_rng", "run_selftest", "CHECKS", "BUILTIN_CONFIGS"]

# built-in configurations exercised by the suite
BUILTIN_CONFIGS = ("rei1 theta=x0^2+x1", "rei2 k=3", "rei2n k=3", "rei3 k=1 nu=0",
                   "rei3 k=2 nu=x2^2")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _record(name: str, value: float, tol: float, ok: bool, **extra) -> dict:
    out = {"name": name, "value": float(value), "tol": float(tol), "pass": bool(ok)}
    out.update(extra)
    return out


def random_polynomial(rng: np.random.Generator, n: int, terms: int = 4, degree: int = 3) -> Expr:
    """Sum of ``terms`` monomials in x_0..x_n, xi_0..xi_n with integer coefficients."""
    out = const(0.0)
    names = [x(i) for i in range(n + 1)] + [xi(i) for i in range(n + 1)]
    for _ in range(terms):
        c = int(rng.integers(1, 4)) * (1 if rng.random() < 0.5 else -1)
        mono: Expr = const(float(c))
        for _ in range(int(rng.integers(1, degree + 1))):
            mono = mono * names[int(rng.integers(len(names)))]
        out = out + mono
    return out


# ---------------------------------------------------------------------------
# individual checks

def check_bracket_algebra(rng, triples: int = 100, n: int = 2) -> list[dict]:
    anti = leib = jac = 0.0
    for _ in range(triples):
        f, g, h = (random_polynomial(rng, n) for _ in range(3))
        exprs = [poisson(f, g), poisson(g, f), poisson(f, g * h), poisson(f, g), poisson(f, h),
                 g, h, poisson(f, poisson(g, h)), poisson(g, poisson(h, f)),
                 poisson(h, poisson(f, g))]
        fn = compile_exprs(exprs)
        for _ in range(3):
            z = rng.uniform(-1.0, 1.0, 2 * (n + 1))
            fg, gf, fgh, fg2, fh, gv, hv, j1, j2, j3 = fn(z[:n + 1].tolist(), z[n + 1:].tolist())
            anti = max(anti, abs(fg + gf) / (1.0 + abs(fg)))
            leib = max(leib, abs(fgh - fg2 * hv - gv * fh) / (1.0 + abs(fgh)))
            jac = max(jac, abs(j1 + j2 + j3) / (1.0 + abs(j1) + abs(j2) + abs(j3)))
    canon = 0.0
    for i in range(n + 1):
        for j in range(n + 1):
            want = 1.0 if i == j else 0.0
            pt = PhasePoint.base(n)
            canon = max(canon, abs(evaluate(poisson(xi(i), x(j)), pt) - want),
                        abs(evaluate(poisson(x(i), x(j)), pt)),
                        abs(evaluate(poisson(xi(i), xi(j)), pt)))
    return [_record("bracket antisymmetry", anti, 1e-12, anti <= 1e-12, triples=triples),
            _record("bracket Leibniz", leib, 1e-12, leib <= 1e-12, triples=triples),
            _record("bracket Jacobi", jac, 1e-8, jac <= 1e-8, triples=triples),
            _record("canonical relations", canon, 0.0, canon == 0.0)]


def check_theta_closed_form(rng, count: int = 50) -> list[dict]:
    out = []
    for k in (1, 2, 3):
        sys = rei2(k)
        closed = parse(rei2_theta_text(), {"k": k}, 3)
        worst = 0.0
        for pt in spectral.sample_sigma(sys, rng, count):
            got = spectral.theta_at(sys, pt, snap=0.0)
            want = evaluate(closed, pt.normalized())
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
        out.append(_record(f"theta closed form rei2 k={k}", worst, 1e-6, worst <= 1e-6,
                           samples=count))
    return out


def sweep_axis(sys, axis: int, values) -> list[tuple[float, str]]:
    """Labels at Sigma points with coordinate ``axis`` pinned to each value."""
    rows = []
    for v in values:
        z = sys.base_point.vector().copy()
        z[axis] = v
        pt = spectral.project(sys, PhasePoint.from_vector(z), frozen=(axis,))
        rows.append((float(v), spectral.classify(sys, pt).label))
    return rows


def sweep_values(lo: float, hi: float, count: int) -> np.ndarray:
    vals = np.linspace(lo, hi, count)
    vals[np.abs(vals) < 1e-12 * max(abs(lo), abs(hi), 1.0)] = 0.0
    return vals


def _expected_band(k: int, v: float) -> str:
    if v == 0.0:
        return "type2"
    if k % 2 == 1 and v < 0:
        return "effective"
    return "type1"


def check_bands(rng, count: int = 41) -> list[dict]:
    out = []
    for k in (3, 2):
        sys = rei2(k)
        rows = sweep_axis(sys, 2, sweep_values(-0.2, 0.2, count))
        bad = sum(lab != _expected_band(k, v) for v, lab in rows)
        # random samples with x2 pinned away from the boundary and exactly on it
        for v in rng.uniform(0.01, 0.2, 10) * rng.choice((-1.0, 1.0), 10):
            bad += sweep_axis(sys, 2, [v])[0][1] != _expected_band(k, v)
        out.append(_record(f"classification bands rei2 k={k}", bad, 0, bad == 0,
                           samples=count + 10, theta_tol=spectral.THETA_TOL))
    return out


def _collect(rng, want: dict, configs=("rei1 theta=x0^2+x1", "rei2 k=1", "rei2 k=3", "rei2n k=2")):
    got = {k: [] for k in want}
    for spec in configs:
        sys = from_spec(spec)
        for pt in spectral.sample_sigma(sys, rng, 40):
            rep = spectral.classify(sys, pt)
            if rep.label in got and len(got[rep.label]) < want[rep.label] and abs(rep.theta) > 1e-4:
                got[rep.label].append((sys, pt))
    return got


def check_product_identity(rng, per_label: int = 20) -> list[dict]:
    got = _collect(rng, {"type1": per_label, "effective": per_label})
    worst = 0.0
    for pts in got.values():
        for sys, pt in pts:
            worst = max(worst, spectral.product_identity_check(sys, pt))
    n1, ne = len(got["type1"]), len(got["effective"])
    ok = worst <= 1e-6 and n1 == per_label and ne == per_label
    return [_record("spectral product identity", worst, 1e-6, ok, type1=n1, effective=ne)]


def check_w_dichotomy(rng, total: int = 200) -> list[dict]:
    """dim W > 0 exactly when |alpha| = 1, on samples whose W rank is unambiguous.

    Points where the rank decision itself is flagged (singular value ratio in
    the ambiguity band) are counted separately and replaced.
    """
    configs = ("rei1 theta=x0^2+x1", "rei2 k=3", "rei2n k=2", "rei3 k=1 nu=0", "rei3 k=2 nu=x2^2")
    systems = [from_spec(s) for s in configs]
    bad = count = ambiguous = 0
    rounds = 0
    while count < total and rounds < 50:
        rounds += 1
        for spec, sys in zip(configs, systems):
            pts = spectral.sample_sigma(sys, rng, 10)
            if spec.startswith("rei2 "):
                # half of the rei2 points sit on the transition x2 = 0
                pts = pts[:5] + [spectral.project(sys, PhasePoint.from_vector(
                    np.r_[p.x[:2], 0.0, p.x[3:], p.xi]), frozen=(2,)) for p in pts[5:]]
            for pt in pts:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", RankAmbiguityWarning)
                    tab = spectral.bracket_table(sys, pt)
                    dw = spectral.w_dim(spectral.fundamental_matrix(sys, pt))
                if any(issubclass(w.category, RankAmbiguityWarning) for w in caught):
                    ambiguous += 1
                    continue
                near = abs(tab.alpha_norm - 1.0) <= 1e-7
                bad += (dw > 0) != near
                count += 1
    return [_record("W dichotomy", bad, 0, bad == 0 and count >= total, samples=count,
                    ambiguous=ambiguous)]


def random_admissible(rng) -> tuple[float, float, float]:
    while True:
        kappa = float(rng.uniform(-2.0, 2.0))
        delta = float(rng.uniform(0.5, 2.0) * rng.choice((-1.0, 1.0)))
        nu = float(rng.uniform(-1.0, 1.0))
        if kappa * kappa - 4.0 * nu > 1e-3 and abs(kappa) > 1e-3:
            return kappa, nu, delta


def check_a_i(rng, count: int = 100) -> list[dict]:
    worst = 0.0
    bad = 0
    for _ in range(count):
        kappa, nu, delta = random_admissible(rng)
        _, b = flow.b_roots(kappa, nu, delta)
        for case in ("independent", "dependent"):
            res = flow.a_I_matrix(kappa, nu, delta, b, case)
            worst = max(worst, res.charpoly_residual)
            bad += not (res.has_unit_eigenvalue and res.other_real_negative)
    spot = flow.a_I_matrix(1.0, 0.0, 1.0, 1.0, "dependent")
    spot_err = max(min(abs(z - w) for z in spot.eigenvalues) for w in (1.0, -1.0, -4.0, -6.0))
    return [_record("A_I charpoly", worst, 1e-10, worst <= 1e-10, tuples=count),
            _record("A_I spectral gap", bad, 0, bad == 0, tuples=count),
            _record("A_I spot spectrum {1,-1,-4,-6}", spot_err, 1e-10, spot_err <= 1e-10)]


def check_tangent(rng) -> list[dict]:
    sys = from_spec("rei3 k=1 nu=0")
    an = flow.transition_invariants(sys)
    res = flow.tangent_search(sys, an)
    o = res.orders
    sl = flow.ORDER_SLACK
    return [_record("transition kappa rei3 k=1", an.kappa, 1e-8, abs(an.kappa - 1.0) <= 1e-8),
            _record("transition nu rei3 k=1", an.nu, 1e-8, abs(an.nu) <= 1e-8),
            _record("tangent order phi1", o["phi1"], sl, abs(o["phi1"] - 2.0) <= sl),
            _record("tangent order phi2", o["phi2"], sl, abs(o["phi2"] - 3.0) <= sl),
            _record("tangent order xi0", o["xi0"], sl, o["xi0"] >= 2.0 - sl),
            _record("tangent p drift", res.p_drift, 1e-9, res.p_drift <= 1e-9)]


def check_factorization(rng) -> list[dict]:
    out = []
    good = from_spec("rei3 k=2 nu=x2^2")
    sh = factor.shell_samples(good, rng)
    suff = factor.sufficient_conditions(good, sh, rng)
    ok = suff.both and suff.defn is not None and suff.defn.passed
    out.append(_record("factorization rei3 k=2 nu=x2^2 passes",
                       max(suff.defn.growth1 + suff.defn.growth2) if suff.defn else math.inf,
                       factor.GROWTH_LIMIT, ok))
    bad = from_spec("rei3 k=1 nu=0")
    sh = factor.shell_samples(bad, rng)
    fact = factor.build_factorization(bad, samples=sh, rng=rng)
    rep = factor.check_defn_one(fact, sh)
    g = rep.growth_over(2)
    out.append(_record("factorization rei3 k=1 fails (two-decade growth)", g, 4.0,
                       (not rep.passed) and g >= 4.0))
    tangent = flow.tangent_search(bad).tangent
    out.append(_record("tangent and factorization exclusive", float(tangent and rep.passed), 0.0,
                       not (tangent and rep.passed)))
    worst = 0.0
    for spec in BUILTIN_CONFIGS:
        sys = from_spec(spec)
        shs = factor.shell_samples(sys, rng, count=12, require_theta_nonneg=False)
        pts = [p for d, ps in factor._shells(shs) for p in ps]
        f = factor.build_factorization(sys, samples={}, autotune=False, rng=rng)
        worst = max(worst, factor.identity_residual(f, pts))
    out.append(_record("factorization identity", worst, 1e-9, worst <= 1e-9))
    return out


def check_flow(rng, per_builtin: int = 20, span: float = 0.5, box: float = 0.1) -> list[dict]:
    # the closed-form symbols are local (rei3 has a pole at x1 = -2/(k+2)), so
    # trajectories start near the base point and run for a bounded time
    drift = trip = 0.0
    for spec in BUILTIN_CONFIGS:
        sys = from_spec(spec)
        for _ in range(per_builtin):
            z = flow.characteristic_point(sys, rng, box=box)
            tr = flow.integrate(sys, z, (0.0, span))
            drift = max(drift, tr.p_drift())
            trip = max(trip, flow.round_trip_error(sys, z, span))
    return [_record("flow p drift", drift, 1e-9, drift <= 1e-9, per_builtin=per_builtin),
            _record("flow round trip", trip, 1e-7, trip <= 1e-7, per_builtin=per_builtin)]


def check_normal_form(rng) -> list[dict]:
    out = []
    for spec in ("rei1 theta=x0^2+x1", "rei2n k=3", "rei3 k=1 nu=0", "rei3 k=2 nu=x2^2"):
        sys = from_spec(spec)
        pts = spectral.sample_sigma(sys, rng, 20, include_xi0=False)
        cert = normform.verify_normal_form(sys, pts)
        out.append(_record(f"normal form {spec}", max(cert.c1, cert.c2, cert.c4), cert.tol,
                           cert.verdict))
    # {xi0 - phi1, phi2} = xin does not vanish on Sigma': must be rejected
    n = 3
    bad = spectral.SymbolSystem(n, [parse("xi1", n=n), parse("x1*xin", n=n)], r=2)
    pts = spectral.sample_sigma(bad, rng, 10, include_xi0=False)
    cert = normform.verify_normal_form(bad, pts)
    out.append(_record("normal form rejects x1*xin", cert.c2, cert.tol, not cert.verdict))
    return out


def check_beta(rng) -> list[dict]:
    n = 4
    phis = [parse(s, {"c": 0.7}, n) for s in ("xi1", "(x0 + x1)*xin", "xi2", "x2*xin + c*x0*xi1")]
    sys = spectral.SymbolSystem(n, phis, r=4)
    res = factor.beta_solve(sys, rng=rng)
    err = float(np.max(np.abs(res.beta - np.array([0.7, 0.0]))))
    return [_record("beta hand solve", err, 1e-8, err <= 1e-8),
            _record("beta orthogonality", abs(res.orthogonality), factor.BETA_TOL, res.ok)]


CHECKS: tuple[tuple[str, Callable], ...] = (
    ("bracket_algebra", check_bracket_algebra),
    ("theta_closed_form", check_theta_closed_form),
    ("bands", check_bands),
    ("product_identity", check_product_identity),
    ("w_dichotomy", check_w_dichotomy),
    ("a_i", check_a_i),
    ("tangent", check_tangent),
    ("factorization", check_factorization),
    ("flow", check_flow),
    ("normal_form", check_normal_form),
    ("beta", check_beta),
)


def run_selftest(seed: int = 0, only: tuple[str, ...] = ()) -> dict:
    """Run the suite; each group gets its own generator derived from ``seed``."""
    groups = {}
    ok = True
    for idx, (name, fn) in enumerate(CHECKS):
        if only and name not in only:
            continue
        rng = np.random.Generator(np.random.Philox(key=seed, counter=idx))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankAmbiguityWarning)
                recs = fn(rng)
        except Exception as exc:  # any module error is a failed check, not a crash
            recs = [_record(name, math.nan, 0.0, False, error=f"{type(exc).__name__}: {exc}")]
        groups[name] = recs
        ok = ok and all(r["pass"] for r in recs)
    return {"seed": seed, "groups": groups, "pass": ok}
