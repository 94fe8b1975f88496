import math

import numpy as np
import pytest

from covassist.baselines import (SaraConfig, bic_score, changepoint_fit, estimate_sparsity_strength,
                                 lasso_cd, lasso_path_ideal, naive_threshold, naive_threshold_level,
                                 sara, sara_bic, sara_ideal, sara_scan)
from covassist.errors import InvalidInput, InvalidParameter, NoSignalDetected
from covassist.gram import gram_changepoint
from oracles import lasso_reference


def test_sara_constant_is_zero():
    assert np.allclose(sara_scan(np.full(50, 3.7), 5), 0)


def test_sara_single_jump():
    y = np.zeros(60)
    y[31:] = 4.0
    W = sara_scan(y, 6)
    assert W[30] == pytest.approx(4.0)
    assert np.argmax(np.abs(W)) == 30
    # the peak decays linearly to zero one window away
    assert W[27] == pytest.approx(2.0) and W[24] == 0 and W[36] == 0


def test_sara_cancellation_and_shift():
    y = np.zeros(40)
    y[20:22] = 5.0  # up then down two steps later
    W = sara_scan(y, 4)
    assert W[19] == pytest.approx(2.5) and W[21] == pytest.approx(-2.5)
    assert W[20] == pytest.approx(0.0)
    rng = np.random.default_rng(0)
    z = rng.standard_normal(40)
    assert np.allclose(sara_scan(z + 11.0, 4), sara_scan(z, 4))


def test_sara_threshold_and_config():
    y = np.zeros(40)
    y[20:] = 3.0
    b = sara(y, SaraConfig(lam=1.5, h=3))
    assert np.flatnonzero(b).tolist() == [18, 19, 20]
    # the cutoff is strict
    assert np.flatnonzero(sara(y, SaraConfig(lam=2.0, h=3))).tolist() == [19]
    with pytest.raises(InvalidParameter):
        SaraConfig(lam=1.0, h=0)
    with pytest.raises(InvalidParameter):
        sara_scan(y, 20)


def test_naive_threshold():
    w = np.array([0.5, -2.0, 1.0, 3.0])
    assert naive_threshold(w, 1.0).tolist() == [0.0, -2.0, 0.0, 3.0]
    # orthogonal design, noise variance 2: cutoff ~ sqrt(2 log p) scale
    p = 10000
    t = naive_threshold_level(p, p ** 0.5, math.sqrt(2 * 4.0 * math.log(p)))
    assert t == pytest.approx(math.sqrt((4.0 + 1.0) ** 2 / 8.0 * math.log(p)))


def test_lasso_zero_penalty_orthogonal():
    xty = np.array([1.0, -2.0, 0.5])
    res = lasso_cd(np.eye(3), xty, 0.0)
    assert res.converged and np.allclose(res.beta, xty)


def test_lasso_large_penalty_is_zero():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 10))
    y = rng.standard_normal(30)
    lam = np.max(np.abs(X.T @ y))
    assert np.all(lasso_cd(X.T @ X, X.T @ y, lam).beta == 0)


def test_lasso_matches_reference():
    rng = np.random.default_rng(2)
    for _ in range(5):
        X = rng.standard_normal((40, 12))
        beta = np.where(rng.random(12) < 0.3, 3.0, 0.0)
        y = X @ beta + rng.standard_normal(40)
        lam = 0.2 * np.max(np.abs(X.T @ y))
        res = lasso_cd(X.T @ X, X.T @ y, lam, tol=1e-12, max_iter=100000)
        ref = lasso_reference(X, y, lam)
        assert np.max(np.abs(res.beta - ref)) < 1e-4


def test_lasso_objective_monotone():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((25, 15))
    y = rng.standard_normal(25)
    tr = lasso_cd(X.T @ X, X.T @ y, 1.0, yty=y @ y).objective_trace
    assert all(b <= a + 1e-12 for a, b in zip(tr, tr[1:]))


def test_lasso_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        lasso_cd(np.eye(2), np.ones(2), -1.0)
    with pytest.raises(InvalidInput):
        lasso_cd(np.eye(3), np.ones(2), 1.0)


def test_lasso_ideal_early_stop_same_optimum():
    p = 200
    g = gram_changepoint(p)
    rng = np.random.default_rng(4)
    beta = np.zeros(p)
    beta[[40, 90, 150]] = [5.0, -5.0, 5.0]
    # column k is -1 on rows <= k
    X = -(np.arange(p)[:, None] <= np.arange(p)[None, :]).astype(float)
    y = X @ beta + rng.standard_normal(p)
    xty = X.T @ y
    assert np.allclose(X.T @ X, g.dense())
    a, lam_a, errs_a = lasso_path_ideal(g, xty, beta)
    b, lam_b, errs_b = lasso_path_ideal(g, xty, beta, early_stop=False)
    assert min(errs_a) == min(errs_b) and lam_a == lam_b
    assert len(errs_a) <= len(errs_b)


def test_bic_and_fit():
    assert bic_score(None, 4.0, 3, 100) == pytest.approx(2.0 + 3 * math.log(100))
    assert changepoint_fit([1.0, 0.0, 2.0]).tolist() == [-3.0, -2.0, -2.0]


def test_sara_tuners():
    rng = np.random.default_rng(5)
    p = 300
    beta = np.zeros(p)
    beta[[100, 200]] = [6.0, -6.0]
    y = changepoint_fit(beta) + rng.standard_normal(p)
    lams = (1.0, 2.0, 3.0, 4.0)
    hs = (5, 10, 20)
    b, lam, h, err = sara_ideal(y, beta, lams, hs)
    assert err == min(int(np.sum(np.sign(sara(y, SaraConfig(l, k))) != np.sign(beta)))
                      for k in hs for l in lams)
    bb, lam2, h2, score = sara_bic(y, lams, hs)
    assert lam2 in lams and h2 in hs and math.isfinite(score)


def test_estimate_sparsity_strength():
    b = np.zeros(10)
    b[[2, 5, 9]] = [3.0, -5.0, 7.0]
    assert estimate_sparsity_strength(b) == (3, 5.0)
    with pytest.raises(NoSignalDetected):
        estimate_sparsity_strength(np.zeros(4))
