import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosongf.coeff import (
    CoeffTensor,
    OperatorConvention,
    dumps,
    f_to_g,
    g_to_f,
    loads,
    prune,
    reconstruct_matrix,
)
from conftest import dense_ladder, sparse_tensors


def test_index_validation():
    with pytest.raises(ValueError):
        CoeffTensor(1, {(0, 1, 2): 1.0})
    with pytest.raises(ValueError):
        CoeffTensor(1, {(-1, 0): 1.0})
    with pytest.raises(ValueError):
        OperatorConvention(0)


def test_negative_lookup_is_zero_and_zeros_are_not_stored():
    t = CoeffTensor(1, {(0, 1): 1.0, (2, 2): 0.0})
    assert t[(-1, 0)] == 0
    assert t.nnz == 1


def test_cap_drops_and_counts():
    t = CoeffTensor(1, {(0, 5): 1.0, (0, 1): 1.0}, cap=4)
    assert t.nnz == 1 and t.truncated == 1


def test_identity_transform():
    # G = e^{xy} F, so the identity becomes sum_j (xy)^j / j!
    g = f_to_g(CoeffTensor.identity(1, cap=10))
    assert g.data == pytest.approx({(j, j): 1 / math.factorial(j) for j in range(11)})
    assert g_to_f(g).max_abs_diff(CoeffTensor.identity(1, cap=10)) < 1e-15


def test_annihilator_transform():
    g = f_to_g(CoeffTensor.monomial((0, 1), cap=16))
    assert set(g.data) == {(j, j + 1) for j in range(16)}
    for j in range(16):
        assert g[(j, j + 1)] == pytest.approx(1 / math.factorial(j), abs=1e-15)


def test_number_transform():
    g = f_to_g(CoeffTensor.monomial((1, 1), cap=12))
    for k in range(1, 13):
        assert g[(k, k)] == pytest.approx(1 / math.factorial(k - 1), abs=1e-15)
    assert g[(0, 0)] == 0


def test_telescoping_inverse():
    g = CoeffTensor(1, {(j, j + 1): 1 / math.factorial(j) for j in range(16)}, cap=16)
    f = g_to_f(g)
    assert abs(f[(0, 1)] - 1) < 1e-15
    assert max(abs(v) for k, v in f.data.items() if k != (0, 1)) < 1e-15


def test_non_unit_convention_round_trip():
    conv = OperatorConvention(2.5 - 0.5j)
    f = CoeffTensor(1, {(0, 1): 1.0, (2, 1): 0.3j}, cap=12)
    back = g_to_f(f_to_g(f, conv), conv)
    assert back.max_abs_diff(f) < 1e-12


@settings(max_examples=200, deadline=None)
@given(sparse_tensors())
def test_round_trip_property(f):
    assert g_to_f(f_to_g(f)).max_abs_diff(f) < 1e-12


@settings(max_examples=100, deadline=None)
@given(sparse_tensors(n_modes=1), sparse_tensors(n_modes=1), st.complex_numbers(max_magnitude=3), st.complex_numbers(max_magnitude=3))
def test_linearity(f1, f2, a, b):
    lhs = f_to_g(f1 * a + f2 * b)
    rhs = f_to_g(f1) * a + f_to_g(f2) * b
    assert lhs.max_abs_diff(rhs) < 1e-12


@pytest.mark.parametrize("levels", [1, 2, 3, 7])
def test_identity_matrix(levels):
    assert np.array_equal(reconstruct_matrix(CoeffTensor.identity(1), levels), np.eye(levels))
    assert np.array_equal(reconstruct_matrix(CoeffTensor.identity(2), levels), np.eye(levels**2))


def test_small_matrices():
    a = reconstruct_matrix(CoeffTensor.monomial((0, 1)), 3)
    assert np.allclose(a, np.diag([1, math.sqrt(2)], 1))
    n = reconstruct_matrix(CoeffTensor.monomial((1, 1)), 3)
    assert np.allclose(n, np.diag([0, 1, 2]))


def test_two_mode_kron_order():
    m = reconstruct_matrix(CoeffTensor.monomial((0, 1, 0, 0)), 3)
    assert np.allclose(m, np.kron(dense_ladder(3), np.eye(3)))


@pytest.mark.parametrize("k,l", [(0, 0), (0, 1), (1, 1), (2, 0), (1, 3)])
def test_basis_element_against_brute_force(k, l):
    levels, big = 12, 40
    a = dense_ladder(big)
    ad = a.conj().T
    mp = np.linalg.matrix_power
    brute = sum((-1) ** j / math.factorial(j) * mp(ad, k + j) @ mp(a, l + j) for j in range(13))
    t = g_to_f(CoeffTensor.monomial((k, l), cap=24))
    assert np.allclose(reconstruct_matrix(t, levels), brute[:levels, :levels], atol=1e-10)


def test_prune():
    t = CoeffTensor(1, {(0, 0): 1.0, (5, 5): 1e-20})
    assert prune(t, 0.0)[0].data == t.data
    kept, removed = prune(t, 1e-12)
    assert kept.data == {(0, 0): 1} and removed == 1
    with pytest.raises(ValueError):
        prune(t, -1.0)


@settings(max_examples=100, deadline=None)
@given(sparse_tensors(), st.floats(0, 1))
def test_prune_invariants(t, tau):
    out, _ = prune(t, tau)
    assert out.nnz <= t.nnz
    assert all(abs(v) >= tau for _, v in out)


@settings(max_examples=50, deadline=None)
@given(sparse_tensors())
def test_text_round_trip(t):
    back = loads(dumps(t, header="snapshot"), cap=t.cap)
    assert back.data == t.data and back.n_modes == t.n_modes


def test_loads_errors():
    with pytest.raises(ValueError, match="line 2"):
        loads("0 1 1.0 0.0\n0 1 2\n")
    with pytest.raises(ValueError):
        loads("# nothing\n")


def test_conj_transpose():
    t = CoeffTensor(1, {(0, 1): 1j, (2, 1): 2.0})
    m = reconstruct_matrix(t, 5)
    assert np.allclose(reconstruct_matrix(t.conj_transpose(), 5), m.conj().T)
