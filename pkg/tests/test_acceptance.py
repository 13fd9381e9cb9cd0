"""Acceptance criteria, one test each.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line per
criterion.  Every criterion must also finish within 60 seconds.
"""

import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from hypclass import factor, flow, spectral
from hypclass.builtins import from_spec, rei2, rei2_theta_text
from hypclass.expr import PhasePoint, compile_exprs, evaluate, parse, poisson, x, xi
from hypclass.linalg import RankAmbiguityWarning
from hypclass.selftest import (BUILTIN_CONFIGS, random_admissible, random_polynomial, sweep_axis,
                               sweep_values)

TIME_LIMIT = 60.0


def gen(seed):
    return np.random.Generator(np.random.Philox(seed))


def report(number, title, ok, detail, started):
    elapsed = time.perf_counter() - started
    ok = ok and elapsed <= TIME_LIMIT
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail} ({elapsed:.1f} s)")
    return ok


def test_criterion_01_theta_closed_form():
    t0 = time.perf_counter()
    rng = gen(101)
    worst = 0.0
    for k in (1, 2, 3):
        sys = rei2(k)
        pts = spectral.sample_sigma(sys, rng, 50)
        assert len(pts) == 50
        for pt in pts:
            p = pt.normalized()
            x0, x2 = p.x[0], p.x[2]
            want = (2 * x2 ** k / k + x0 ** 2 * x2 ** (2 * (k - 1)) - x2 ** (2 * k) / k ** 2) \
                / (1 - x2 ** k / k) ** 2
            got = spectral.theta_at(sys, pt, snap=0.0)
            worst = max(worst, abs(got - want) / abs(want))
    ok = report(1, "theta from brackets vs closed form, rei2 k=1,2,3", worst <= 1e-6,
                f"max relative error {worst:.2e} over 150 points", t0)
    assert ok


def test_criterion_02_classification_bands():
    t0 = time.perf_counter()
    rng = gen(102)
    bad = total = 0
    for k in (3, 2):
        sys = rei2(k)
        values = list(sweep_values(-0.2, 0.2, 41)) + list(rng.uniform(-0.2, 0.2, 20))
        for v, label in sweep_axis(sys, 2, values):
            if v == 0.0:
                want = "type2"
            elif k == 3 and v < 0:
                want = "effective"
            else:
                want = "type1"
            bad += label != want
            total += 1
    ok = report(2, "rei2 bands k=3 and k=2", bad == 0, f"{bad} misclassified of {total}", t0)
    assert ok


def test_criterion_03_product_identity():
    t0 = time.perf_counter()
    rng = gen(103)
    found = {"type1": [], "effective": []}
    for spec in ("rei1 theta=x0^2+x1", "rei2 k=1", "rei2 k=3", "rei2n k=2"):
        sys = from_spec(spec)
        for pt in spectral.sample_sigma(sys, rng, 40):
            rep = spectral.classify(sys, pt)
            if rep.label in found and len(found[rep.label]) < 20 and abs(rep.theta) > 1e-4:
                found[rep.label].append(spectral.product_identity_check(sys, pt))
    worst = max(max(v) for v in found.values())
    counts = {k: len(v) for k, v in found.items()}
    ok = report(3, "(1-|alpha|^2) det M = product of eigenvalues",
                worst <= 1e-6 and counts == {"type1": 20, "effective": 20},
                f"max residual {worst:.2e}, points {counts}", t0)
    assert ok


def test_criterion_04_w_dichotomy():
    t0 = time.perf_counter()
    rng = gen(104)
    bad = count = ambiguous = 0
    systems = [from_spec(s) for s in BUILTIN_CONFIGS]
    while count < 200:
        for sys in systems:
            pts = spectral.sample_sigma(sys, rng, 10)
            if sys.name.startswith("rei2 "):
                pts += [spectral.project(sys, PhasePoint.from_vector(
                    np.r_[p.x[:2], 0.0, p.x[3:], p.xi]), frozen=(2,)) for p in pts[:5]]
            for pt in pts:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", RankAmbiguityWarning)
                    alpha = spectral.bracket_table(sys, pt).alpha
                    dim_w = spectral.w_dim(spectral.fundamental_matrix(sys, pt))
                if caught:
                    ambiguous += 1
                    continue
                bad += (dim_w > 0) != (abs(np.linalg.norm(alpha) - 1.0) <= 1e-7)
                count += 1
    ok = report(4, "dim W > 0 iff |alpha| = 1", bad == 0,
                f"{bad} counterexamples over {count} samples ({ambiguous} rank-ambiguous skipped)", t0)
    assert ok


def test_criterion_05_a_i_spectra():
    t0 = time.perf_counter()
    rng = gen(105)
    worst = 0.0
    bad = 0
    for _ in range(100):
        kappa, nu, delta = random_admissible(rng)
        _, b = flow.b_roots(kappa, nu, delta)
        q = [1.0, 5.0, 8.0 - 4.0 * kappa * delta * b]
        for case, extra in (("independent", [[1, -1], [1, 2], [1, 6]]), ("dependent", [[1, -1], [1, 6]])):
            want = q
            for f in extra:
                want = np.polymul(want, f)
            res = flow.a_I_matrix(kappa, nu, delta, b, case)
            got = np.poly(res.matrix)
            worst = max(worst, float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want)))))
            ev = res.eigenvalues
            unit = np.min(np.abs(ev - 1.0)) <= 1e-8
            rest = [z for z in ev if abs(z - 1.0) > 1e-8 and abs(z.imag) <= 1e-9]
            bad += not (unit and all(z.real < 0 for z in rest))
    spot = flow.a_I_matrix(1.0, 0.0, 1.0, 1.0, "dependent").eigenvalues
    spot_err = max(np.min(np.abs(spot - w)) for w in (1.0, -1.0, -4.0, -6.0))
    ok = report(5, "A_I characteristic polynomials and spectra",
                worst <= 1e-10 and bad == 0 and spot_err <= 1e-10,
                f"charpoly residual {worst:.1e}, {bad} spectral failures, spot error {spot_err:.1e}", t0)
    assert ok


def test_criterion_06_tangent_bicharacteristic():
    t0 = time.perf_counter()
    sys = from_spec("rei3 k=1 nu=0")
    res = flow.tangent_search(sys)
    o = res.orders
    elapsed = time.perf_counter() - t0
    cond = (abs(o["phi1"] - 2) <= 0.15 and abs(o["phi2"] - 3) <= 0.15 and o["xi0"] >= 2 - 0.15
            and res.p_drift <= 1e-9 and elapsed <= 30.0)
    ok = report(6, "tangent bicharacteristic for rei3 k=1",
                cond, f"orders phi1 {o['phi1']:.3f}, phi2 {o['phi2']:.3f}, xi0 {o['xi0']:.3f}, "
                      f"p drift {res.p_drift:.1e}", t0)
    assert ok


def test_criterion_07_factorization_dichotomy():
    t0 = time.perf_counter()
    rng = gen(107)
    good = from_spec("rei3 k=2 nu=x2^2")
    suff = factor.sufficient_conditions(good, factor.shell_samples(good, rng), rng)
    good_ok = suff.both and suff.defn is not None and suff.defn.passed
    bad = from_spec("rei3 k=1 nu=0")
    sh = factor.shell_samples(bad, rng)
    rep = factor.check_defn_one(factor.build_factorization(bad, samples=sh, rng=rng), sh)
    growth = rep.growth_over(2)
    tangent = flow.tangent_search(bad).tangent
    cond = good_ok and not rep.passed and growth >= 4.0 and tangent
    ok = report(7, "factorization: rei3 k=2 nu=x2^2 passes, rei3 k=1 fails", cond,
                f"k=2 C1 sups {[round(c, 3) for c in suff.defn.c1]}, "
                f"k=1 two-decade growth {growth:.1f}", t0)
    assert ok


def test_criterion_08_bracket_algebra():
    t0 = time.perf_counter()
    rng = gen(108)
    n = 2
    failures = 0
    for _ in range(100):
        f, g, h = (random_polynomial(rng, n) for _ in range(3))
        fn = compile_exprs([poisson(f, g), poisson(g, f), poisson(f, g * h), poisson(f, h), g, h,
                            poisson(f, poisson(g, h)), poisson(g, poisson(h, f)),
                            poisson(h, poisson(f, g))])
        for _ in range(3):
            z = rng.uniform(-1.0, 1.0, 2 * (n + 1))
            fg, gf, fgh, fh, gv, hv, j1, j2, j3 = fn(z[:n + 1].tolist(), z[n + 1:].tolist())
            failures += abs(fg + gf) > 1e-12 * (1 + abs(fg))
            failures += abs(fgh - fg * hv - gv * fh) > 1e-12 * (1 + abs(fgh))
            failures += abs(j1 + j2 + j3) > 1e-8 * (1 + abs(j1) + abs(j2) + abs(j3))
    base = PhasePoint.base(n)
    for i in range(n + 1):
        for j in range(n + 1):
            failures += evaluate(poisson(xi(i), x(j)), base) != (1.0 if i == j else 0.0)
            failures += evaluate(poisson(x(i), x(j)), base) != 0.0
            failures += evaluate(poisson(xi(i), xi(j)), base) != 0.0
    ok = report(8, "bracket antisymmetry, Leibniz, Jacobi, canonical relations", failures == 0,
                f"{failures} failures over 100 random triples", t0)
    assert ok


def test_criterion_09_flow_conservation():
    t0 = time.perf_counter()
    rng = gen(109)
    drift = trip = 0.0
    for spec in BUILTIN_CONFIGS:
        sys = from_spec(spec)
        for _ in range(20):
            z = flow.characteristic_point(sys, rng, box=0.1)
            traj = flow.integrate(sys, z, (0.0, 0.5))
            drift = max(drift, traj.p_drift() / (1.0 + abs(traj.p_values[0])))
            trip = max(trip, flow.round_trip_error(sys, z, 0.5))
    ok = report(9, "flow energy drift and time reversal", drift <= 1e-9 and trip <= 1e-7,
                f"max p drift {drift:.1e}, max round trip {trip:.1e} "
                f"({20 * len(BUILTIN_CONFIGS)} trajectories)", t0)
    assert ok


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    outs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        proc = subprocess.run([sys.executable, "-m", "hypclass.cli", "selftest", "--seed", "42",
                               "--out", str(d)], capture_output=True, check=False)
        outs.append((proc.returncode, proc.stdout, (d / "report.json").read_bytes(),
                     (d / "report.txt").read_bytes()))
    same = outs[0] == outs[1]
    ok = report(10, "selftest --seed 42 twice gives identical reports", same and outs[0][0] == 0,
                f"identical={same}, exit code {outs[0][0]}", t0)
    assert ok
