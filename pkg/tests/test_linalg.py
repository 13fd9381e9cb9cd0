import warnings

import numpy as np
import pytest

from hypclass.linalg import (RankAmbiguityWarning, charpoly, eigvals, hausdorff, null_space,
                             numeric_rank, orthonormal_completion)


def sorted_eigs(v):
    v = np.asarray(v, dtype=complex)
    return v[np.lexsort((np.round(v.imag, 9), np.round(v.real, 9)))]


def test_eigvals_rotation():
    got = sorted_eigs(eigvals(np.array([[0.0, 1.0], [-1.0, 0.0]])))
    assert np.allclose(got, [-1j, 1j], atol=1e-14)


def test_eigvals_zero_matrix():
    assert np.all(eigvals(np.zeros((4, 4))) == 0)


def test_eigvals_against_numpy(rng):
    for size in (3, 6, 9, 14):
        a = rng.normal(size=(size, size))
        mine = eigvals(a)
        assert hausdorff(mine, np.linalg.eigvals(a)) <= 1e-9 * np.linalg.norm(a)


def test_eigvals_hamiltonian_pairing(rng):
    # J S with S symmetric has spectrum closed under negation and conjugation
    n = 3
    s = rng.normal(size=(2 * n, 2 * n))
    s = s + s.T
    j = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    ev = eigvals(j @ s)
    assert hausdorff(ev, -ev) <= 1e-8 * np.linalg.norm(s)
    assert hausdorff(ev, ev.conj()) <= 1e-8 * np.linalg.norm(s)


def test_charpoly_companion():
    # (x-1)(x+2)(x+6)
    want = np.poly([1.0, -2.0, -6.0])
    a = np.diag([1.0, -2.0, -6.0]) + np.triu(np.ones((3, 3)), 1)
    assert np.allclose(charpoly(a), want, atol=1e-12)


def test_numeric_rank_and_null_space():
    a = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert numeric_rank(a) == 2
    ns = null_space(a)
    assert ns.shape == (3, 1)
    assert np.allclose(np.abs(ns[:, 0]), [0, 0, 1])


def test_rank_ambiguity_warning():
    a = np.diag([1.0, 1e-9])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        numeric_rank(a)
    assert any(issubclass(w.category, RankAmbiguityWarning) for w in caught)


def test_orthonormal_completion():
    q = orthonormal_completion(np.array([3.0, 4.0, 0.0]))
    assert np.allclose(q.T @ q, np.eye(3), atol=1e-14)
    assert np.allclose(q[:, 0], [0.6, 0.8, 0.0])


def test_hausdorff_simple():
    assert hausdorff([1j, -1j], [1j, -1j]) == 0.0
    assert hausdorff([0.0], [0.5, -0.25]) == pytest.approx(0.5)
