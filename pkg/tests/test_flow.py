import math

import numpy as np
import pytest

from hypclass import flow
from hypclass.builtins import from_spec, rei3
from hypclass.expr import PhasePoint, parse, x
from hypclass.flow import (NoRealRoot, PreconditionError, a_I_matrix, b_roots, constant_term_residual,
                           integrate, leading_constants, round_trip_error, tangent_search,
                           transition_invariants, vanishing_order)
from hypclass.linalg import hausdorff
from hypclass.selftest import random_admissible
from hypclass.spectral import SymbolSystem


def test_straight_line_flow():
    sys = SymbolSystem(2, [parse("xi1", n=2)])
    rho0 = PhasePoint([0.0, 0.0, 0.0], [1.0, 1.0, 0.5])
    traj = integrate(sys, rho0, (0.0, 1.0))
    assert np.allclose(traj.x0, -2.0 * traj.s, atol=1e-12)
    assert traj.p_drift() == 0.0


def test_harmonic_block_rotation():
    sys = SymbolSystem(2, [x(1), parse("xi1", n=2)])
    rho0 = PhasePoint([0.0, 0.1, 0.0], [0.1, 0.0, 1.0])
    traj = integrate(sys, rho0, (0.0, math.pi))
    x1 = traj.states[:, 1]
    assert np.allclose(x1, 0.1 * np.cos(2 * traj.s), atol=1e-9)
    # one full turn of (x1, xi1) in rescaled time 2s
    assert np.allclose(traj.states[-1, 1:3], [0.1, 0.0], atol=1e-9)
    assert abs(traj.states[-1, 4]) <= 1e-9


def test_rei3_conservation(rng):
    sys = rei3(1)
    for _ in range(3):
        z = flow.characteristic_point(sys, rng, box=0.1)
        traj = integrate(sys, z, (0.0, 0.5))
        assert traj.p_drift() <= 1e-9
        assert round_trip_error(sys, z, 0.5) <= 1e-7


@pytest.mark.parametrize("kappa,nu,delta,roots,chosen", [
    (1.0, 0.0, 1.0, [1.0], 1.0),
    (4.0, 3.0, 1.0, [1 / 3, 1.0], 1 / 3),
])
def test_b_roots_examples(kappa, nu, delta, roots, chosen):
    got, b = b_roots(kappa, nu, delta)
    assert np.allclose(sorted(got), roots, rtol=1e-14)
    assert b == pytest.approx(chosen, rel=1e-14)


def test_b_roots_errors():
    with pytest.raises(NoRealRoot):
        b_roots(1.0, 0.5, 1.0)
    with pytest.raises(NoRealRoot):
        b_roots(0.0, 0.0, 1.0)
    with pytest.raises(PreconditionError):
        b_roots(1.0, 0.0, 0.0)


def test_b_roots_solve_quadratic(rng):
    for _ in range(50):
        kappa, nu, delta = random_admissible(rng)
        roots, b = b_roots(kappa, nu, delta)
        for r in roots:
            assert abs(1 / delta - kappa * r + nu * delta * r * r) <= 1e-12 * max(1.0, abs(r)) ** 2
        if nu != 0:
            disc = math.sqrt(kappa * kappa - 4 * nu)
            closed = {kappa / (2 * nu * delta) + s * disc / (2 * nu * abs(delta)) for s in (1, -1)}
            assert hausdorff(sorted(closed), roots) <= 1e-10 * max(map(abs, roots))


def test_leading_constants_example():
    lead = leading_constants(1.0, 0.0, 1.0, 1.0)
    assert (lead["x0"], lead["phi2"], lead["theta_hat"], lead["xi0"]) == (2.0, 1.0, 0.0, 0.5)
    assert lead["phi_rest"] == 0.0 and lead["psi"] == 0.0


def test_constant_term_residual_zero(rng):
    for _ in range(30):
        kappa, nu, delta = random_admissible(rng)
        _, b = b_roots(kappa, nu, delta)
        lead = leading_constants(kappa, nu, delta, b)
        # the order-0 terms are cubic in b
        assert constant_term_residual(kappa, nu, delta, lead) <= 1e-12 * max(1.0, abs(b)) ** 3
        # dependent form of theta: -nu x0^2 / 4
        assert -nu * lead["x0"] ** 2 / 4 == pytest.approx(lead["theta_hat"], rel=1e-14, abs=1e-300)


def test_a_I_spot_spectra():
    dep = a_I_matrix(1.0, 0.0, 1.0, 1.0, "dependent")
    ind = a_I_matrix(1.0, 0.0, 1.0, 1.0, "independent")
    assert hausdorff(dep.eigenvalues, [1, -1, -4, -6]) <= 1e-10
    assert hausdorff(ind.eigenvalues, [1, -2, -6, -1, -4]) <= 1e-10


def test_a_I_random_tuples(rng):
    for _ in range(100):
        kappa, nu, delta = random_admissible(rng)
        _, b = b_roots(kappa, nu, delta)
        for case in ("independent", "dependent"):
            res = a_I_matrix(kappa, nu, delta, b, case)
            assert res.charpoly_residual <= 1e-10
            assert res.has_unit_eigenvalue and res.other_real_negative


def test_a_I_rejects_non_root():
    with pytest.raises(NoRealRoot):
        a_I_matrix(1.0, 0.0, 1.0, 0.5)


def test_transition_rei3_k1():
    an = transition_invariants(rei3(1))
    assert an.kappa == pytest.approx(1.0, abs=1e-8)
    assert an.nu == pytest.approx(0.0, abs=1e-12)
    assert an.discriminant == pytest.approx(1.0, abs=1e-8)
    assert an.exists_tangent and an.b == pytest.approx(1.0)


@pytest.mark.parametrize("c,tangent", [(0.1, True), (0.15, False)])
def test_transition_discriminant_flips(c, tangent):
    # nu = d^2/dx0^2 (c x0^2) = 2c at the base point, so the boundary is c = 1/8
    an = transition_invariants(rei3(1, f"{c}*x0^2"))
    assert an.nu == pytest.approx(2 * c, rel=1e-8)
    assert an.exists_tangent is tangent


def test_transition_theta_independent_of_x0():
    assert transition_invariants(from_spec("rei1 theta=x2^2")).nu == 0.0


def test_tangent_search_rei3_k1():
    res = tangent_search(rei3(1))
    assert res.orders["phi1"] == pytest.approx(2.0, abs=0.15)
    assert res.orders["phi2"] == pytest.approx(3.0, abs=0.15)
    assert res.orders["theta"] >= 2.0 - 0.15
    assert res.p_drift <= 1e-9
    assert vanishing_order(res.trajectory, x(0)) == pytest.approx(1.0, abs=0.05)


def test_tangent_search_keeps_x2_on_sigma0():
    res = tangent_search(rei3(1, "x2^2"), user_functions={"x2": x(2)})
    assert res.tangent
    assert res.orders["x2"] >= 2.0 - 0.15


def test_tangent_search_precondition():
    with pytest.raises(PreconditionError):
        tangent_search(rei3(1, "0.15*x0^2"))
