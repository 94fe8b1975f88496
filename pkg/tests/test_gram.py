import math

import numpy as np
import pytest

from covassist.errors import InvalidDimension, InvalidFilter, InvalidParameter, NumericFailure
from covassist.gram import (LinearFilter, farima_acf, farima_acf_quad, gram_changepoint,
                            gram_dense, gram_farima, gram_powerdecay, matrix_sqrt_spd, sparsify,
                            spd_solve)
from covassist.rates import cp_block_inverse


def test_filter_invariants():
    f = LinearFilter((1.0, -2.0, 1.0))
    assert f.order == 2
    with pytest.raises(InvalidFilter):
        LinearFilter((2.0, 1.0))


def test_changepoint_small():
    g = gram_changepoint(3)
    assert np.array_equal(g.dense(), [[1, 1, 1], [1, 2, 2], [1, 2, 3]])
    assert gram_changepoint(2).entry(0, 0) == 1
    assert gram_changepoint(5000).entry(1999, 1999) == 2000
    with pytest.raises(InvalidDimension):
        gram_changepoint(1)


def test_farima_unit_variance_and_limits():
    g = gram_farima(50, 0.35)
    assert abs(g.entry(0, 0) - 1.0) < 1e-8
    assert abs(farima_acf_quad(0.35, 0) - 1.0) < 1e-8
    acf = farima_acf(1e-9, 5)
    assert abs(acf[0] - 1) < 1e-8 and np.all(np.abs(acf[1:]) < 1e-8)
    with pytest.raises(InvalidParameter):
        gram_farima(10, 0.5)


@pytest.mark.parametrize("phi", [0.25, 0.35, 0.45])
def test_farima_recursion_matches_quadrature(phi):
    acf = farima_acf(phi, 101)
    for k in (0, 1, 2, 5, 10, 37, 100):
        assert abs(acf[k] - farima_acf_quad(phi, k)) < 1e-6


def test_powerdecay_entries():
    g = gram_powerdecay(10, 0.95, 5.0)
    assert g.entry(3, 3) == 1.0
    assert abs(g.entry(0, 1) - 6 ** -0.95) < 1e-15


def test_symmetry_all_kinds():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((30, 30))
    models = [gram_changepoint(30), gram_farima(30, 0.3), gram_powerdecay(30, 0.95, 5.0),
              gram_dense(A @ A.T + 30 * np.eye(30))]
    for g in models:
        for i, j in rng.integers(0, 30, size=(1000, 2)):
            assert g.entry(i, j) == g.entry(j, i)


def _naive_pair(G, coeffs):
    p = G.shape[0]
    D = np.zeros((p, p))
    for i in range(p):
        for k, c in enumerate(coeffs):
            if i + k < p:
                D[i, i + k] = c
    return D @ G, D @ G @ D.T


@pytest.mark.parametrize("coeffs", [(1.0,), (1.0, -1.0), (1.0, -2.0, 1.0)])
def test_sparsify_matches_dense_products(coeffs):
    rng = np.random.default_rng(1)
    A = rng.standard_normal((40, 40))
    for g in (gram_dense(A @ A.T / 40 + np.eye(40)), gram_farima(40, 0.35)):
        sp = sparsify(g, LinearFilter(coeffs), 0.0)
        B, H = _naive_pair(g.dense(), coeffs)
        idx = np.arange(40)
        assert np.max(np.abs(sp.B_block(idx, idx) - B)) < 1e-12
        assert np.max(np.abs(sp.H_block(idx, idx) - H)) < 1e-12


def test_identity_filter_gives_G():
    g = gram_farima(20, 0.3)
    sp = sparsify(g, LinearFilter.identity(), 0.0)
    idx = np.arange(20)
    assert np.allclose(sp.B_block(idx, idx), g.dense(), atol=0)
    assert np.allclose(sp.H_block(idx, idx), g.dense(), atol=0)


def test_changepoint_pair_structure():
    p = 12
    sp = sparsify(gram_changepoint(p), LinearFilter.second_difference(), 0.0)
    idx = np.arange(p)
    assert np.array_equal(sp.B_block(idx, idx), np.eye(p))
    H = 2 * np.eye(p) - np.eye(p, k=1) - np.eye(p, k=-1)
    H[-1, -1] = 1
    assert np.array_equal(sp.H_block(idx, idx), H)
    # the analytic pair agrees with B = DG, H = DGD' for D = G^{-1}
    G = gram_changepoint(p).dense()
    D = np.linalg.inv(G)
    assert np.allclose(D @ G @ D.T, H, atol=1e-10)


def test_sparsify_rejects_long_filter():
    with pytest.raises(InvalidFilter):
        sparsify(gram_farima(2, 0.3), LinearFilter((1.0, -2.0, 1.0)))


def test_neighbors_match_threshold():
    g = gram_farima(60, 0.35)
    delta = 0.05
    sp = sparsify(g, LinearFilter.first_difference(), delta)
    idx = np.arange(60)
    B = sp.B_block(idx, idx)
    H = sp.H_block(idx, idx)
    strong = (np.abs(B) > delta) | (np.abs(B.T) > delta) | (np.abs(H) > delta)
    np.fill_diagonal(strong, False)
    nb = sp.strong_neighbors(delta)
    for i in range(60):
        assert list(nb[i]) == list(np.flatnonzero(strong[i]))


def test_farima_filtered_decay_slope():
    g = gram_farima(1200, 0.35)
    sp = sparsify(g, LinearFilter.first_difference(), 0.0)
    lags = np.arange(10, 501)
    b = np.abs(sp.B_block([600], 600 + lags)[0])
    slope = np.polyfit(np.log(1 + lags), np.log(b), 1)[0]
    assert abs(slope - (-1.3)) < 0.05


def test_matrix_sqrt():
    assert np.allclose(matrix_sqrt_spd(np.eye(3)), np.eye(3))
    assert np.allclose(matrix_sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    g = gram_farima(200, 0.35)
    S = matrix_sqrt_spd(g)
    assert np.max(np.abs(S @ S - g.dense())) < 1e-8
    assert np.array_equal(S, S.T)
    with pytest.raises(NumericFailure) as err:
        matrix_sqrt_spd(np.diag([1.0, -1.0]))
    assert err.value.detail["smallest_eigenvalue"] == -1.0


def test_spd_solve():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(spd_solve(np.eye(3), b), b)
    rng = np.random.default_rng(4)
    A = rng.standard_normal((5, 5))
    M = A @ A.T + np.eye(5)
    x = rng.standard_normal(5)
    assert np.max(np.abs(spd_solve(M, M @ x) - x)) < 1e-10
    with pytest.raises(NumericFailure):
        spd_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), b[:2])


@pytest.mark.parametrize("k", [1, 2, 5, 10, 20])
def test_changepoint_block_inverse(k):
    p = 60
    sp = sparsify(gram_changepoint(p), LinearFilter.second_difference(), 0.0)
    F = np.arange(20, 20 + k)
    inv = np.linalg.inv(sp.H_block(F, F))
    assert np.max(np.abs(inv - cp_block_inverse(k))) < 1e-10
