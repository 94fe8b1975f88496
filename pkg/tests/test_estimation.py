import csv
import math

import numpy as np
import pytest

from covassist.errors import ComponentTooLarge, InvalidParameter
from covassist.estimation import (CaseConfig, PeConfig, case_select, changepoint_xty,
                                  cp_simple_patch, cp_split_patch, l0_constrained_fit,
                                  pe_fit_component, pe_step)
from covassist.gosd import from_edges
from covassist.gram import LinearFilter, gram_changepoint, gram_dense, gram_powerdecay, sparsify
from covassist.rates import fisher_info_patched
from covassist.screening import ScreeningState
from covassist.simlab import RwDesign, gen_beta, gen_data, rep_rng
from oracles import l0_enumeration, l0_grid, l0_objective


@pytest.mark.parametrize("d", [-3.0, -1.2, -0.4, 0.0, 0.9, 1.5, 2.2, 5.0])
def test_scalar_closed_form(d):
    u, v = 1.3, 1.5
    theta, obj = l0_constrained_fit(np.ones((1, 1)), np.array([d]), u, v)
    star = math.copysign(max(abs(d), v), d) if d else v
    cand = 0.5 * (d - star) ** 2 + u * u / 2
    if cand < 0.5 * d * d:
        assert theta[0] == pytest.approx(star) and obj == pytest.approx(cand)
    else:
        assert theta[0] == 0 and obj == pytest.approx(0.5 * d * d)


def test_zero_data_gives_zero():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    theta, obj = l0_constrained_fit(X, np.zeros(6), 1.0, 1.0)
    assert np.all(theta == 0) and obj == 0


def test_small_components_match_oracles():
    rng = np.random.default_rng(1)
    for _ in range(40):
        k = int(rng.integers(1, 4))
        X = rng.standard_normal((k + 3, k))
        y = X @ (rng.standard_normal(k) * 2) + rng.standard_normal(k + 3)
        u, v = rng.uniform(0.3, 2.0), rng.uniform(0.3, 1.5)
        theta, obj = l0_constrained_fit(X, y, u, v)
        assert abs(obj - l0_objective(X, y, theta, u)) < 1e-9
        assert np.all((theta == 0) | (np.abs(theta) >= v - 1e-12))
        assert obj <= l0_enumeration(X, y, u, v) + 1e-6
        assert obj <= l0_grid(X, y, u, v) + 1e-6


def test_larger_component_matches_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(5):
        k = 6
        X = rng.standard_normal((10, k)) + 0.5 * rng.standard_normal((10, 1))
        y = X @ np.where(rng.random(k) < 0.5, 2.0, 0.0) + rng.standard_normal(10)
        theta, obj = l0_constrained_fit(X, y, 1.2, 1.0)
        assert abs(obj - l0_enumeration(X, y, 1.2, 1.0)) < 1e-8


def test_component_cap():
    sp = sparsify(gram_changepoint(100), LinearFilter.second_difference(), 0.0)
    cfg = PeConfig(l_pe=4, u_pe=1.0, v_pe=1.0, cap=3)
    with pytest.raises(ComponentTooLarge):
        pe_fit_component(sp, np.zeros(100), [10, 11, 12, 13], list(range(8, 20)), cfg)


def test_split_patch_singleton():
    l_pe, j = 40, 200
    (piece, patch), = cp_split_patch([j], l_pe, 1000)
    M = math.sqrt(l_pe / 2)
    assert list(piece) == [j]
    assert patch[0] == math.ceil(j - l_pe / (2 * M)) and patch[-1] == j + l_pe // 2
    assert list(patch) == list(range(patch[0], patch[-1] + 1))


def test_split_patch_no_gap_is_one_piece():
    pieces = cp_split_patch([100, 102, 105], 40, 1000)
    assert len(pieces) == 1 and list(pieces[0][0]) == [100, 102, 105]


def test_split_patch_two_far_nodes():
    l_pe = 40
    M = (l_pe / 2) ** (1 / 3)
    pieces = cp_split_patch([100, 400], l_pe, 1000)
    assert [list(pc) for pc, _ in pieces] == [[400], [100]]
    # round 1 (right piece) and round 2 (left piece), bounds by hand
    assert (pieces[0][1][0], pieces[0][1][-1]) == (393, 420)
    assert (pieces[1][1][0], pieces[1][1][-1]) == (98, 107)
    assert 400 - l_pe / (2 * M) == pytest.approx(392.63, abs=0.01)
    assert 100 + l_pe / (2 * M) == pytest.approx(107.37, abs=0.01)
    with pytest.raises(InvalidParameter):
        cp_split_patch([5], 1, 100)


def test_simple_patch():
    assert list(cp_simple_patch([100], 40, 1000)) == list(range(91, 130))
    assert list(cp_simple_patch([10, 15], 0, 100)) == [10, 15]
    assert cp_simple_patch([0], 40, 1000)[0] == 0


def _state(p, retained):
    return ScreeningState(p=p, retained=tuple(sorted(retained)))


def test_pe_step_empty():
    sp = sparsify(gram_changepoint(50), LinearFilter.second_difference(), 0.0)
    res = pe_step(sp, np.ones(50), _state(50, []), from_edges(50, []),
                  PeConfig(l_pe=2, u_pe=1.0, v_pe=1.0))
    assert np.all(res.beta_hat == 0) and res.support == ()


def test_components_fit_independently():
    # components {0, 6, 7, 8} and {3, 4} of the ten-node reference graph
    edges = [(0, 1), (0, 6), (1, 3), (2, 3), (3, 4), (4, 5), (6, 7), (7, 8), (7, 9), (8, 9)]
    gplus = from_edges(10, edges)
    G = np.eye(10)
    for i, j in ((0, 6), (6, 7), (7, 8), (3, 4)):
        G[i, j] = G[j, i] = 0.3
    sp = sparsify(gram_dense(G), LinearFilter.identity(), 0.0)
    cfg = PeConfig(l_pe=0, u_pe=1.0, v_pe=1.0)
    rng = np.random.default_rng(3)
    d = G @ np.array([3, 0, 0, -3, 2.5, 0, 0, 3, 0, 0.0]) + 0.3 * rng.standard_normal(10)
    kept = [0, 3, 4, 6, 7, 8]
    joint = pe_step(sp, d, _state(10, kept), gplus, cfg)
    d2 = d.copy()
    d2[[3, 4]] = [-5.0, 0.1]
    other = pe_step(sp, d2, _state(10, kept), gplus, cfg)
    assert np.array_equal(joint.beta_hat[[0, 6, 7, 8]], other.beta_hat[[0, 6, 7, 8]])
    comps = sorted(rec["component"] for rec in joint.diagnostics)
    assert comps == [(0, 6, 7, 8), (3, 4)]
    # separate fits of each component equal the joint objective split
    sep = np.zeros(10)
    for comp in ((0, 6, 7, 8), (3, 4)):
        th, _ = pe_fit_component(sp, d, comp, comp, cfg)
        sep[list(comp)] = th
    assert np.array_equal(sep, joint.beta_hat)


def test_patched_information_dominance():
    g = gram_powerdecay(400, 0.95, 5.0)
    f = LinearFilter.first_difference()
    for I in ([200], [200, 203]):
        GI = g.block(I, I)
        prev = -np.inf
        for radius in (0, 1, 3, 6, 10):
            Iplus = list(range(I[0] - radius, I[-1] + radius + 1))
            Q = fisher_info_patched(g, f, I, Iplus)
            assert np.linalg.eigvalsh(GI - Q).min() > -1e-10
            low = np.linalg.eigvalsh(Q).min()
            assert low >= prev - 1e-12
            prev = low


def _cp_instance(seed=2024, p=1000, th=0.6, tau=6.0):
    design = RwDesign(p, vartheta=th, tau_p=tau)
    rng = rep_rng(seed, 0)
    beta = gen_beta(design, rng, p - 1)
    y = gen_data(gram_changepoint(p), beta, rng).values
    cfg = CaseConfig.for_experiment("changepoint", p, design.s_p, tau)
    return y, beta, cfg


def test_case_select_golden_support():
    y, beta, cfg = _cp_instance()
    res = case_select(gram_changepoint(1000), y, cfg, "y")
    assert res.support == (20, 76, 234, 269, 274, 308, 403, 469, 485, 717, 778, 881, 982)
    assert np.all(np.abs(res.beta_hat[list(res.support)]) >= cfg.v_pe - 1e-12)
    assert set(res.support) <= set(res.screening.retained)


def test_case_select_input_kinds_agree():
    y, _, cfg = _cp_instance(seed=5)
    g = gram_changepoint(1000)
    a = case_select(g, y, cfg, "y").beta_hat
    b = case_select(g, changepoint_xty(y), cfg, "xty").beta_hat
    sp = sparsify(g, LinearFilter(cfg.filter), cfg.delta)
    c = case_select(g, sp.filter_data(changepoint_xty(y)), cfg, "d").beta_hat
    assert np.array_equal(a, b) and np.array_equal(a, c)


def test_case_select_null_and_odd_symmetry():
    g = gram_changepoint(500)
    cfg = CaseConfig.for_experiment("changepoint", 500, 10, 5.0)
    assert np.all(case_select(g, np.zeros(500), cfg, "d").beta_hat == 0)
    y, _, cfg = _cp_instance(seed=6)
    g = gram_changepoint(1000)
    sp = sparsify(g, LinearFilter(cfg.filter), cfg.delta)
    d = sp.filter_data(changepoint_xty(y))
    pos = case_select(g, d, cfg, "d").beta_hat
    neg = case_select(g, -d, cfg, "d").beta_hat
    assert np.array_equal(np.sign(pos), -np.sign(neg))


def test_selection_csv(tmp_path):
    y, _, cfg = _cp_instance()
    res = case_select(gram_changepoint(1000), y, cfg, "y")
    path = tmp_path / "sel.csv"
    res.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["index", "beta_hat", "in_support"]
    assert sum(int(r[2]) for r in rows[1:]) == len(res.support)
