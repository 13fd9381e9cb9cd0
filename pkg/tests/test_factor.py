import numpy as np
import pytest

from hypclass import factor
from hypclass.builtins import from_spec, rei1, rei2_normal, rei3
from hypclass.expr import PhasePoint, compile_exprs, const, parse, x, xi
from hypclass.factor import (Factorization, beta_solve, build_factorization, check_defn_one,
                             identity_residual, q_lower_bound, shell_samples,
                             sufficient_conditions, weight)
from hypclass.spectral import SymbolSystem


def flat(samples):
    return [p for _, pts in factor._shells(samples) for p in pts]


@pytest.fixture(scope="module")
def shells():
    rng = np.random.Generator(np.random.Philox(7))
    cache = {}

    def get(spec, count=48, **kw):
        key = (spec, count, tuple(sorted(kw.items())))
        if key not in cache:
            cache[key] = shell_samples(from_spec(spec), rng, count=count, **kw)
        return cache[key]
    return get


def test_weight_is_positive_and_first_order():
    w = weight(2)
    fn = compile_exprs((w,))
    assert fn([0, 0, 0], [0, 0, 0])[0] == 1.0
    assert fn([0, 0, 0], [5.0, 3.0, 4.0])[0] == pytest.approx(np.sqrt(26.0))


def test_beta_empty_for_rank_two():
    assert beta_solve(rei1("0")).beta.size == 0
    res = beta_solve(rei2_normal(3))
    assert res.beta.size == 0 and res.ok


def test_beta_synthetic_rank_four(rng):
    n = 4
    phis = [parse(s, {"c": 0.7}, n) for s in ("xi1", "(x0 + x1)*xin", "xi2", "x2*xin + c*x0*xi1")]
    sys = SymbolSystem(n, phis, r=4)
    res = beta_solve(sys, rng=rng)
    # {phi3, phi4} = 1, alpha_{31} = 0, alpha_{41} = -c: the 2x2 skew block inverts by hand
    assert np.allclose(res.beta, [0.7, 0.0], atol=1e-8)
    assert abs(res.orthogonality) <= factor.BETA_TOL
    assert res.fit_residual <= factor.FIT_RESIDUAL


def test_toy_factorization_has_zero_constants(rng):
    n = 2
    q = (xi(1) ** 2 + xi(2) ** 2) * (x(1) ** 2 + x(2) ** 2)
    fact = Factorization(xi(0), xi(0), q, n)
    samples = {}
    for dist in factor.SHELL_DISTANCES:
        samples[dist] = [PhasePoint(np.r_[rng.uniform(-0.1, 0.1), dist * rng.uniform(0.5, 1, 2)],
                                    np.r_[rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0])
                         for _ in range(10)]
    rep = check_defn_one(fact, samples)
    # {xi0, Q} = dQ/dx0 = 0 and {xi0, xi0} = 0
    assert rep.C1 == 0.0 and rep.C2 == 0.0
    assert rep.passed


def test_q_formula_without_theta(rng):
    sys = rei1("0")
    fact = build_factorization(sys, lam=1.0, samples={}, autotune=False, rng=rng)
    phi1, phi2 = sys.phis
    w2 = weight(2) ** 2
    want = phi2 ** 2 + 2 * phi1 ** 4 / w2 * (1 - phi1 ** 2 / w2 / 2)
    fn = compile_exprs((fact.Q, want))
    for _ in range(20):
        pt = PhasePoint(rng.uniform(-0.3, 0.3, 3), np.r_[rng.uniform(-1, 1, 2), 1.0])
        a, b = fn(pt.x.tolist(), pt.xi.tolist())
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_q_nonnegative_rei1_even_power(shells, rng):
    spec = "rei1 theta=0.5*x2^2"
    fact = build_factorization(from_spec(spec), samples=shells(spec), rng=rng)
    for pt in flat(shells(spec)):
        assert fact.values(pt)[2] >= 0.0


@pytest.mark.parametrize("spec", ["rei1 theta=x0^2+x1", "rei2 k=3", "rei2n k=3", "rei3 k=1 nu=0",
                                  "rei3 k=2 nu=x2^2"])
def test_identity_holds(spec, shells, rng):
    sys = from_spec(spec)
    pts = flat(shells(spec, count=12, require_theta_nonneg=False))
    fact = build_factorization(sys, samples={}, autotune=False, rng=rng)
    assert identity_residual(fact, pts) <= 1e-9


def test_rei2_even_theta_passes(shells, rng):
    spec = "rei2n k=3 theta=x2^2"
    sys = from_spec(spec)
    fact = build_factorization(sys, samples=shells(spec), rng=rng)
    rep = check_defn_one(fact, shells(spec))
    assert rep.passed and np.isfinite(rep.C1) and np.isfinite(rep.C2)
    assert rep.q_negative == 0


def test_rei3_dichotomy(shells, rng):
    good = from_spec("rei3 k=2 nu=x2^2")
    suff = sufficient_conditions(good, shells("rei3 k=2 nu=x2^2"), rng)
    assert suff.cond1 and suff.cond2
    assert suff.defn is not None and suff.defn.passed and suff.implication_holds
    bad = from_spec("rei3 k=1 nu=0")
    sh = shells("rei3 k=1 nu=0")
    rep = check_defn_one(build_factorization(bad, samples=sh, rng=rng), sh)
    assert not rep.passed
    assert rep.growth_over(2) >= 4.0


def test_rei3_k1_second_condition_fails(shells, rng):
    suff = sufficient_conditions(from_spec("rei3 k=1 nu=0"), shells("rei3 k=1 nu=0"), rng)
    assert not suff.cond2
    assert suff.defn is None


def test_flat_theta_first_condition(shells, rng):
    # theta = x2^2 has vanishing gradient at the base point
    spec = "rei2n k=3 theta=x2^2"
    suff = sufficient_conditions(from_spec(spec), shells(spec), rng)
    assert suff.cond1


def test_q_lower_bound_stable(shells, rng):
    spec = "rei3 k=2 nu=x2^2"
    sys = from_spec(spec)
    fact = build_factorization(sys, samples=shells(spec), rng=rng)
    c_small = q_lower_bound(fact, sys, flat(shells(spec, count=24)))
    c_large = q_lower_bound(fact, sys, flat(shells(spec, count=48)))
    assert c_small > 0 and c_large > 0
    assert abs(c_small - c_large) <= 0.2 * max(c_small, c_large)
