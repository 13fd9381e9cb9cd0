import numpy as np
import pytest

from hypclass import spectral
from hypclass.builtins import from_spec, rei1, rei2, rei2_normal, rei2_theta_text, rei3
from hypclass.expr import PhasePoint, evaluate, parse, x, xi
from hypclass.linalg import hausdorff
from hypclass.spectral import (DegenerateConfiguration, NotApplicable, RankMismatch, SigmaError,
                               SymbolSystem, bracket_table, classify, fundamental_matrix,
                               product_identity_check, reduced_bracket_check, sample_sigma,
                               spectrum, theta_at, trace_plus, w_dim)


def on_x2(sys, v):
    z = sys.base_point.vector().copy()
    z[2] = v
    return spectral.project(sys, PhasePoint.from_vector(z), frozen=(2,))


def test_rei1_base_point_nilpotent():
    sys = rei1("0")
    f = fundamental_matrix(sys, sys.base_point)
    assert np.allclose(np.linalg.matrix_power(f, 4), 0, atol=1e-14)
    assert np.all(np.abs(spectrum(f)) <= 1e-7)
    assert w_dim(f) == 2


def test_rei1_type1_point_spectrum():
    sys = rei1("0.25")
    f = fundamental_matrix(sys, sys.base_point)
    ev = spectrum(f)
    nz = ev[np.abs(ev) > 1e-8]
    assert hausdorff(nz, [0.5j, -0.5j]) <= 1e-10
    assert w_dim(f) == 0
    assert trace_plus(f) == pytest.approx(0.5, abs=1e-12)


def test_decoupled_wave_symbol():
    sys = SymbolSystem(2, [parse("xi1", n=2)])
    f = fundamental_matrix(sys, sys.base_point)
    assert np.linalg.matrix_rank(f @ f) == 0
    assert np.all(spectrum(f) == 0)


def test_fundamental_matrix_off_sigma():
    sys = rei1("0")
    with pytest.raises(SigmaError):
        fundamental_matrix(sys, PhasePoint([0, 0.3, 0], [0, 0, 1.0]))


def test_trace_plus_examples():
    assert trace_plus([0.5j, -0.5j, 0]) == 0.5
    assert trace_plus(np.zeros(4)) == 0.0
    assert trace_plus([1j, -1j, 2j, -2j]) == pytest.approx(3.0)


def test_bracket_table_rei1():
    tab = bracket_table(rei1("0"), rei1("0").base_point)
    assert tab.r == 2
    assert abs(tab.delta) == pytest.approx(1.0)


def test_bracket_table_rei2_rank_two(rng):
    sys = rei2(3)
    for pt in sample_sigma(sys, rng, 10):
        assert bracket_table(sys, pt).r == 2


def test_commuting_phis_degenerate():
    sys = SymbolSystem(3, [xi(1), xi(2)])
    with pytest.raises(DegenerateConfiguration):
        bracket_table(sys, sys.base_point)


def test_declared_rank_mismatch():
    sys = SymbolSystem(2, [parse("xi1", n=2), parse("(x0 + x1)*xin", n=2)], r=4)
    with pytest.raises(RankMismatch):
        bracket_table(sys, sys.base_point)


def test_theta_closed_form_k2():
    sys = rei2(2)
    closed = parse(rei2_theta_text(), {"k": 2}, 3)
    for s in (0.05, -0.1, 0.17):
        pt = on_x2(sys, s)
        x0 = pt.x[0]
        want = (s ** 2 + x0 ** 2 * s ** 2 - s ** 4 / 4) / (1 - s ** 2 / 2) ** 2
        assert theta_at(sys, pt, snap=0.0) == pytest.approx(want, rel=1e-8)
        assert evaluate(closed, pt.normalized()) == pytest.approx(want, rel=1e-12)


def test_theta_rei1_matches_declared(rng):
    sys = rei1("x0^2 + x2")
    for pt in sample_sigma(sys, rng, 10):
        want = pt.x[0] ** 2 + pt.x[2]
        assert theta_at(sys, pt) == pytest.approx(want, abs=1e-8)


def test_theta_snaps_to_zero_on_unit_alpha():
    sys = rei1("0")
    assert theta_at(sys, sys.base_point) == 0.0


@pytest.mark.parametrize("k,v,label", [(3, -0.1, "effective"), (3, 0.0, "type2"), (3, 0.1, "type1"),
                                       (2, -0.1, "type1"), (2, 0.0, "type2"), (2, 0.1, "type1")])
def test_rei2_bands(k, v, label):
    sys = rei2(k)
    assert classify(sys, on_x2(sys, v)).label == label


def test_rei1_theta_zero_type2(rng):
    sys = rei1("0")
    for pt in sample_sigma(sys, rng, 10):
        rep = classify(sys, pt)
        assert rep.label == "type2" and rep.dim_w == 2


def test_product_identity_type1():
    sys = rei1("0.25")
    assert product_identity_check(sys, sys.base_point) <= 1e-6


def test_product_identity_effective():
    sys = rei2(1)
    pt = on_x2(sys, -0.1)
    assert classify(sys, pt).label == "effective"
    assert product_identity_check(sys, pt) <= 1e-6


def test_product_identity_type2_rejected():
    sys = rei1("0")
    with pytest.raises(NotApplicable):
        product_identity_check(sys, sys.base_point)


def test_reduced_bracket_check():
    sys = rei1("0.25")
    assert reduced_bracket_check(sys, sys.base_point) <= 1e-7
    sys = rei2(1)
    assert reduced_bracket_check(sys, on_x2(sys, -0.1)) <= 1e-7


def test_diagonalizable_toy_real_pair():
    sys = SymbolSystem(1, [x(0)])
    pt = PhasePoint([0.0, 0.0], [0.0, 1.0])
    ev = spectrum(fundamental_matrix(sys, pt))
    assert hausdorff(ev[np.abs(ev) > 1e-9], [1.0, -1.0]) <= 1e-12


def test_label_matches_theta_sign_all_builtins(rng):
    for spec in ("rei1 theta=x0^2+x1", "rei2 k=3", "rei2n k=3", "rei3 k=1 nu=0", "rei3 k=2 nu=x2^2"):
        sys = from_spec(spec)
        ranks = set()
        for pt in sample_sigma(sys, rng, 15):
            rep = classify(sys, pt)
            want = "type1" if rep.theta > 1e-7 else "effective" if rep.theta < -1e-7 else "type2"
            assert rep.label == want
            ranks.add(bracket_table(sys, pt).r)
        assert len(ranks) == 1


def test_orthogonal_remix_keeps_spectrum(rng):
    base = rei2(1)
    pt = on_x2(base, -0.1)
    t = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    mixed = [sum(float(t[j, i]) * base.phis[i] for i in range(3)) for j in range(3)]
    sys = SymbolSystem(3, mixed)
    a = spectrum(fundamental_matrix(base, pt))
    b = spectrum(fundamental_matrix(sys, pt))
    assert hausdorff(a, b) <= 1e-7
    assert classify(sys, pt).label == classify(base, pt).label
