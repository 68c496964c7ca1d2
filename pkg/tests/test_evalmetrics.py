import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from fedlr.evalmetrics import (
    MIB,
    CostParams,
    cost_model,
    effective_rank,
    evaluate,
    hr_at_k,
    ndcg_at_k,
    rank_test_item,
    round_cost,
)
from oracles import rank_by_sort

# --- ranking ------------------------------------------------------------------------------


def test_rank_examples():
    s = np.arange(100.0)[::-1].copy()
    assert rank_test_item(s, 0) == 0
    s[5] = s[0]
    assert rank_test_item(s, 0) == 1
    with pytest.raises(ValueError):
        rank_test_item([np.inf, 0.0], 0)


def test_rank_matches_sort_oracle():
    g = np.random.default_rng(0)
    for _ in range(1000):
        # coarse rounding forces frequent ties
        scores = np.round(g.normal(size=100), 1)
        t = int(g.integers(100))
        assert rank_test_item(scores, t) == rank_by_sort(scores.tolist(), t)


def test_hr_ndcg_examples():
    assert (hr_at_k(0), ndcg_at_k(0)) == (1, 1.0)
    assert hr_at_k(9) == 1 and ndcg_at_k(9) == pytest.approx(0.2891, abs=1e-4)
    assert ndcg_at_k(9) == 1 / math.log2(11)
    assert (hr_at_k(10), ndcg_at_k(10)) == (0, 0.0)


def _setup(scores):
    # users score candidates through one-hot item embeddings: Q = I, P = scores
    M, C = scores.shape
    Q = np.eye(C)
    test = np.zeros(M, dtype=np.int64)
    negs = np.tile(np.arange(1, C), (M, 1))
    return scores, Q, test, negs


def test_evaluate_perfect_model():
    s = np.tile(np.r_[1.0, np.zeros(99)], (3, 1))
    assert evaluate(*_setup(s)) == (100.0, 100.0)


def test_evaluate_two_user_toy():
    g = np.random.default_rng(1)
    s = np.sort(g.random((2, 100)), axis=1)[:, ::-1].copy()
    # user 0's test item ranks first; user 1's has 15 negatives above it
    s[1, 0], s[1, 15] = s[1, 15], s[1, 0]
    s[1, 1:16] = np.sort(s[1, 1:16])[::-1]
    hr, ndcg = evaluate(*_setup(s))
    assert (hr, ndcg) == (50.0, 50.0)


def test_random_scores_hit_ten_percent():
    M = 5000
    s = np.random.default_rng(2).random((M, 100))
    hr, ndcg = evaluate(*_setup(s))
    sigma = 100 * math.sqrt(0.1 * 0.9 / M)
    assert abs(hr - 10.0) < 3 * sigma
    assert ndcg <= hr


def test_missing_negatives():
    with pytest.raises(ValueError):
        evaluate(np.ones((2, 3)), np.eye(3), np.zeros(2, dtype=int), None)


# --- effective rank -------------------------------------------------------------------------


def test_effective_rank_examples():
    g = np.random.default_rng(3)
    R = np.outer(g.normal(size=8), g.normal(size=20))
    assert effective_rank(R, 0.95) == effective_rank(R, 0.99) == 1
    assert effective_rank(np.eye(64), 0.95) == 61
    assert effective_rank(np.diag([math.sqrt(0.96), math.sqrt(0.04)]), 0.95) == 1
    assert effective_rank(np.zeros((4, 6))) == 0


def test_effective_rank_hand_spectrum():
    # squared spectrum 50, 30, 15, 5: cumulative 0.5, 0.8, 0.95, 1.0
    D = np.diag(np.sqrt([50.0, 30.0, 15.0, 5.0]))
    assert [effective_rank(D, t) for t in (0.5, 0.8, 0.95, 0.99)] == [1, 2, 3, 4]


def test_effective_rank_orthogonal_invariance():
    g = np.random.default_rng(4)
    for _ in range(20):
        X = g.normal(size=(6, 6)) @ np.diag(g.random(6) ** 3) @ g.normal(size=(6, 9))
        U = ortho_group.rvs(6, random_state=g)
        V = ortho_group.rvs(9, random_state=g)
        for t in (0.95, 0.99):
            assert effective_rank(U @ X @ V, t) == effective_rank(X, t)


# --- cost model --------------------------------------------------------------------------------


def test_cost_examples():
    p = CostParams()
    mf = 64 * 3706 * 4
    rep = cost_model([(mf, mf, 1.0)] * 1000, p)
    assert rep.t_comm / 60 == pytest.approx(80.43, rel=0.05)
    colr = 1 * 3706 * 4
    assert cost_model([(colr, colr, 1.0)] * 1000, p).t_comm / 60 == pytest.approx(1.26, rel=0.05)
    assert round_cost(0, 0, 1.0, p).t_comm == 0.0


def test_cost_round_formula():
    p = CostParams(b_down=2.0, b_up=1.0, r_comp=3.0, c_comp=5.0, t_server=0.5)
    rep = round_cost([MIB, 2 * MIB], [4 * MIB, 0], [1.0, 2.0], p)
    # slowest client: max(4/2 + 1, 0 + 2) = 3; compute: max(3*1+5, 3*2+5) + 0.5
    assert rep.t_comm == 3.0 and rep.t_comp == 11.5 and rep.t_round == 14.5


def test_cost_linearity():
    p = CostParams()
    one = cost_model([(1000, 3000, 1.0)], p)
    many = cost_model([(1000, 3000, 1.0)] * 7, p)
    assert many.t_comm == pytest.approx(7 * one.t_comm) and many.t_comp == pytest.approx(7 * one.t_comp)
    double = cost_model([(2000, 6000, 1.0)], p)
    assert double.t_comm == pytest.approx(2 * one.t_comm)


def test_cost_params_validation():
    with pytest.raises(ValueError):
        CostParams(b_up=0)
