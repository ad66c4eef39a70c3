import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budgetalloc.allocator import (
    CURVE_COLUMNS,
    PredictionPair,
    QEvalParams,
    QFunction,
    brute_force_oracle,
    choices,
    cost_value_curve,
    dual_objective,
    eom_outcome,
    evaluate_q,
    matched_indices,
    q_value,
    read_curve,
    recover_allocation,
    write_curve,
)
from budgetalloc.data import RctBatch
from budgetalloc.errors import (
    Infeasible,
    InfeasibleBudget,
    InstanceTooLarge,
    NegativeAlpha,
    ShapeMismatch,
    ValidationError,
)
from budgetalloc.synthgen import generate_ground_truth, sample_rct


def _batch(t, y, z):
    t = np.asarray(t)
    return RctBatch(np.zeros((len(t), 0)), t, np.asarray(y, float), np.asarray(z, float))


def _random_pred(r, B, K):
    return PredictionPair(r.random((B, K)), r.uniform(0, 2, (B, K)))


def test_prediction_pair_invariants():
    with pytest.raises(ValidationError):
        PredictionPair(np.array([[1.5]]), np.array([[0.0]]))
    with pytest.raises(ValidationError):
        PredictionPair(np.array([[0.5]]), np.array([[-1.0]]))
    with pytest.raises(ShapeMismatch):
        PredictionPair(np.zeros((2, 2)), np.zeros((2, 3)))


def test_dual_objective_examples():
    p = PredictionPair(np.array([[0.1, 0.5]]), np.array([[0.0, 1.0]]))
    assert dual_objective(p, 1.0, 0.25) == pytest.approx(0.5, abs=1e-15)
    r = np.random.default_rng(0)
    q = _random_pred(r, 6, 3)
    assert dual_objective(q, 3.0, 0.0) == pytest.approx(q.v.max(axis=1).sum())
    with pytest.raises(NegativeAlpha):
        dual_objective(q, 1.0, -0.1)


def test_recover_allocation_examples():
    p = PredictionPair(np.array([[0.1, 0.5], [0.2, 0.3]]), np.array([[0.0, 1.0], [0.0, 1.0]]))
    x = recover_allocation(p, 0.25)
    assert x.argmax(axis=1).tolist() == [1, 0]  # treatments (2, 1)
    r = np.random.default_rng(1)
    q = _random_pred(r, 20, 4)
    assert np.array_equal(recover_allocation(q, 0.0).argmax(1), q.v.argmax(1))
    with pytest.raises(NegativeAlpha):
        recover_allocation(q, -1.0)


def test_tie_break_lowest_cost_then_index():
    v = np.array([[0.5, 0.5, 0.5], [0.3, 0.3, 0.1]])
    c = np.array([[2.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    # row 0 all tie at alpha=0: cheapest (1.0) wins, index 1 before 2
    # row 1: 0.3 twice with equal cost, lowest index
    assert choices(v, c, 0.0).tolist() == [1, 0]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), alpha=st.floats(0, 5), k=st.floats(0.01, 100),
       shift=st.floats(-0.5, 0.5))
def test_allocation_properties(seed, alpha, k, shift):
    r = np.random.default_rng(seed)
    B, K = 6, 4
    v, c = r.random((B, K)), r.uniform(0, 2, (B, K))
    x = recover_allocation(PredictionPair(v, c), alpha)
    assert np.all(x.sum(axis=1) == 1) and set(np.unique(x)) <= {0, 1}
    assert np.array_equal(choices(k * v, k * c, alpha), choices(v, c, alpha))
    shifted = v.copy()
    shifted[2] += shift
    assert np.array_equal(choices(shifted, c, alpha), choices(v, c, alpha))


def test_matched_indices_examples():
    b = _batch([0, 1, 0], [1, 0, 1], [2, 5, 4])
    x = np.array([[1, 0], [1, 0], [1, 0]])
    assert matched_indices(x, b).tolist() == [0, 2]
    assert matched_indices(np.eye(2, dtype=int)[[0, 1, 0]], b).tolist() == [0, 1, 2]
    b3 = _batch([0, 0, 0], [1, 0, 1], [2, 5, 4])
    assert len(matched_indices(np.array([[0, 1]] * 3), b3)) == 0
    with pytest.raises(ShapeMismatch):
        matched_indices(np.array([[1, 0]]), b)


def test_eom_outcome_examples():
    b = _batch([0, 1, 0], [1, 0, 1], [2, 5, 4])
    assert eom_outcome(np.array([0, 2]), b) == (1.0, 3.0)
    V, C = eom_outcome(np.arange(3), b)
    assert V == pytest.approx(2 / 3) and C == pytest.approx(11 / 3)
    assert eom_outcome(np.array([], dtype=int), b) == (0.0, 0.0)


def test_eom_unbiased_per_arm(synth10k):
    gt, ds = synth10k
    b = ds.as_batch()
    for j in range(4):
        x = np.zeros((len(ds), 4), dtype=int)
        x[:, j] = 1
        V, C = eom_outcome(matched_indices(x, b), b)
        arm = ds.treatment == j
        p = gt.v_gt[:, j].mean()
        se = np.sqrt(p * (1 - p) / arm.sum())
        assert abs(V - p) < 3 * se
        assert C == j + 1


def test_ground_truth_q(synth10k):
    gt, ds = synth10k
    params = QEvalParams.per_capita(2.0, len(ds))
    r = evaluate_q(PredictionPair(gt.v_gt, gt.c_gt), ds.as_batch(), params)
    assert abs(r.q - 0.2123) <= 0.012


def test_q_consistency_and_kernel_agreement(synth10k):
    gt, ds = synth10k
    b = ds.as_batch()
    pred = PredictionPair(gt.v_gt, gt.c_gt)
    params = QEvalParams.per_capita(1.7, len(ds))
    r = evaluate_q(pred, b, params)
    S = matched_indices(recover_allocation(pred, r.alpha), b)
    assert eom_outcome(S, b)[0] == r.q
    assert q_value(pred, b, params) == (r.q, r.alpha)
    qf = QFunction(b, params)
    assert qf(pred.v, pred.c) == r.q
    stack = np.stack([pred.v, np.clip(pred.v + 0.01, 0, 1)])
    many = qf.many(stack, pred.c)
    assert many[0] == r.q and many[1] == qf(stack[1], pred.c)


def test_q_entries_match_direct(synth10k):
    gt, ds = synth10k
    b = ds.as_batch()
    qf = QFunction(b, QEvalParams.per_capita(2.0, len(ds)))
    rows, cols, vals = np.array([3, 10, 99]), np.array([0, 2, 3]), np.array([0.9, 0.0, 0.5])
    got = qf.entries(gt.v_gt, gt.c_gt, rows, cols, vals, "v")
    for k in range(3):
        v = gt.v_gt.copy()
        v[rows[k], cols[k]] = vals[k]
        assert got[k] == qf(v, gt.c_gt)
    got_c = qf.entries(gt.v_gt, gt.c_gt, rows, cols, vals + 1, "c")
    c = gt.c_gt.copy()
    c[rows[0], cols[0]] = vals[0] + 1
    assert got_c[0] == qf(gt.v_gt, c)


def test_bisection_contract():
    r = np.random.default_rng(4)
    for _ in range(30):
        B, K = 200, 3
        v, c = r.random((B, K)), r.uniform(0, 2, (B, K))
        t = r.integers(0, K, B)
        b = _batch(t, r.integers(0, 2, B), c[np.arange(B), t])
        params = QEvalParams(total_budget=r.uniform(0.3, 1.2) * B, max_iters=12,
                             raise_infeasible=False)
        res = evaluate_q(PredictionPair(v, c), b, params)
        target, eps = params.resolve(B)
        last = res.trace[-1]
        assert last.alpha == res.alpha and last.per_capita_response == res.q
        assert len(res.trace) <= params.max_iters
        if abs(last.per_capita_cost - target) > eps:
            assert len(res.trace) == params.max_iters
        for p in res.trace:
            assert 0 <= p.per_capita_response <= 1 and p.per_capita_cost >= 0
            assert p.matched_count <= B


def test_slack_budget_drives_alpha_to_zero():
    r = np.random.default_rng(5)
    B = 300
    v, c = r.random((B, 3)), r.uniform(0, 1, (B, 3))
    t = r.integers(0, 3, B)
    b = _batch(t, r.integers(0, 2, B), c[np.arange(B), t])
    pred = PredictionPair(v, c)
    res = evaluate_q(pred, b, QEvalParams(total_budget=100.0 * B))
    assert res.alpha < 1e-9
    S = matched_indices(recover_allocation(pred, 0.0), b)
    assert res.q == eom_outcome(S, b)[0]


def test_empty_match_lowers_alpha():
    # every RCT user got treatment 1 but the model prefers treatment 2 for any alpha <= 16
    B = 4
    v = np.tile([0.1, 0.9], (B, 1))
    c = np.tile([1.0, 1.05], (B, 1))
    b = _batch([0] * B, [1, 0, 1, 0], [1.0] * B)
    res = evaluate_q(PredictionPair(v, c), b, QEvalParams(total_budget=1.5 * B, max_iters=5,
                                                          raise_infeasible=False))
    assert res.trace[0].empty_match
    assert res.trace[1].alpha < res.trace[0].alpha


def test_infeasible_budget():
    B = 5
    v = np.tile([0.1, 0.9], (B, 1))
    c = np.tile([1.0, 2.0], (B, 1))
    b = _batch([0, 1, 0, 1, 0], [1, 0, 1, 0, 1], [1, 2, 1, 2, 1])
    with pytest.raises(InfeasibleBudget):
        evaluate_q(PredictionPair(v, c), b, QEvalParams(total_budget=0.1 * B))
    with pytest.raises(InfeasibleBudget):
        QFunction(b, QEvalParams(total_budget=0.1 * B))(v, c)
    res = evaluate_q(PredictionPair(v, c), b, QEvalParams(total_budget=0.1 * B,
                                                          raise_infeasible=False))
    assert len(res.trace) == 40


def test_n_ary_search_hits_target(synth10k):
    gt, ds = synth10k
    pred = PredictionPair(gt.v_gt, gt.c_gt)
    params = QEvalParams.per_capita(2.0, len(ds), n_ary=3)
    r = evaluate_q(pred, ds.as_batch(), params)
    target, eps = params.resolve(len(ds))
    final = next(p for p in r.trace[-3:] if p.alpha == r.alpha)
    assert final.per_capita_response == r.q
    assert abs(final.per_capita_cost - target) <= eps or len(r.trace) == 3 * 40
    assert abs(r.q - 0.2123) <= 0.012
    assert QFunction(ds.as_batch(), params)(pred.v, pred.c) == r.q


def test_q_params_validation():
    for kw in ({"total_budget": -1}, {"total_budget": 1, "max_iters": 0},
               {"total_budget": 1, "alpha_max": 0}, {"total_budget": 1, "tolerance": 0},
               {"total_budget": 1, "n_ary": 0}):
        with pytest.raises(ValidationError):
            QEvalParams(**kw)


def test_curve_limits_and_monotone_predicted_cost():
    r = np.random.default_rng(6)
    for _ in range(100):
        B, K = 12, 4
        v, c = r.random((B, K)), r.uniform(0, 2, (B, K))
        grid = np.linspace(0, 20, 41)
        spent = [c[np.arange(B), choices(v, c, a)].sum() / B for a in grid]
        assert np.all(np.diff(spent) <= 1e-12)
    # large alpha: every row picks its cheapest item
    big = choices(v, c, 1e6)
    assert np.array_equal(big, c.argmin(axis=1))


def test_curve_near_ground_truth_point(synth10k, tmp_path):
    gt, ds = synth10k
    pts = cost_value_curve(PredictionPair(gt.v_gt, gt.c_gt), ds.as_batch(),
                           np.linspace(0, 1, 201))
    near = min(pts, key=lambda p: abs(p.per_capita_cost - 2.0))
    assert abs(near.per_capita_cost - 2.0) < 0.05
    assert abs(near.per_capita_response - 0.212) < 0.015
    write_curve(pts, tmp_path / "curve.csv")
    assert (tmp_path / "curve.csv").read_text().splitlines()[0] == ",".join(CURVE_COLUMNS)
    assert read_curve(tmp_path / "curve.csv") == pts
    with pytest.raises(NegativeAlpha):
        cost_value_curve(PredictionPair(gt.v_gt, gt.c_gt), ds.as_batch(), [-1.0])


def test_brute_force_examples():
    val, x = brute_force_oracle(PredictionPair(np.array([[0.2, 0.9]]), np.array([[1.0, 5.0]])), 1.0)
    assert val == pytest.approx(0.2) and x.argmax(1).tolist() == [0]
    p = PredictionPair(np.array([[0.1, 0.6], [0.1, 0.4]]), np.array([[0.0, 1.0], [0.0, 1.0]]))
    val, x = brute_force_oracle(p, 1.0)
    assert val == pytest.approx(0.7) and x.argmax(1).tolist() == [1, 0]
    with pytest.raises(Infeasible):
        brute_force_oracle(PredictionPair(np.array([[0.2, 0.9]]), np.array([[1.0, 5.0]])), 0.5)
    with pytest.raises(InstanceTooLarge):
        brute_force_oracle(PredictionPair(np.zeros((12, 4)), np.zeros((12, 4))), 1.0)


def test_brute_force_matches_naive_enumeration():
    r = np.random.default_rng(7)
    for _ in range(30):
        B, K = r.integers(1, 5), r.integers(1, 4)
        v, c = r.random((B, K)), r.uniform(0, 2, (B, K))
        T = r.uniform(0, 2 * B)
        best = -np.inf
        for combo in itertools.product(range(K), repeat=B):
            cost = sum(c[i, j] for i, j in enumerate(combo))
            if cost <= T:
                best = max(best, sum(v[i, j] for i, j in enumerate(combo)))
        if best == -np.inf:
            with pytest.raises(Infeasible):
                brute_force_oracle(PredictionPair(v, c), T)
        else:
            assert brute_force_oracle(PredictionPair(v, c), T)[0] == pytest.approx(best, abs=1e-12)


def test_weak_duality_small():
    r = np.random.default_rng(8)
    for _ in range(50):
        pred = _random_pred(r, 5, 3)
        T = float(pred.c.min(axis=1).sum() + r.uniform(0, 3))
        best, _ = brute_force_oracle(pred, T)
        for a in r.uniform(0, 3, 5):
            assert dual_objective(pred, T, a) >= best - 1e-12
