import numpy as np
import pytest

from budgetalloc.allocator import PredictionPair, QEvalParams, QFunction
from budgetalloc.errors import InvalidParams, ShapeMismatch, ZeroVector
from budgetalloc.gradest import (
    FdParams,
    NesParams,
    cosine_similarity,
    estimate,
    estimate_grad_fd,
    estimate_grad_nes,
    fd_mask,
)


def _pred(B=5, K=3, seed=0, lo=0.2, hi=0.8):
    r = np.random.default_rng(seed)
    return PredictionPair(r.uniform(lo, hi, (B, K)), r.uniform(0.5, 2, (B, K)))


def test_fd_constant_is_zero():
    est = estimate_grad_fd(lambda v, c: 3.0, _pred(), FdParams(num_entries=15), "v")
    assert np.all(est.grad_v == 0) and np.all(est.grad_c == 0)
    assert est.evaluations_used == 30


def test_fd_quadratic():
    p = _pred(seed=1)
    est = estimate_grad_fd(lambda v, c: float(np.sum(v ** 2)), p, FdParams(h=1e-3, num_entries=15), "v")
    rel = np.abs(est.grad_v - 2 * p.v) / np.abs(2 * p.v)
    assert rel.max() < 1e-4


def test_fd_wrt_c():
    p = _pred(seed=2)
    est = estimate_grad_fd(lambda v, c: float(np.sum(c ** 2)), p, FdParams(h=1e-3, num_entries=15), "c")
    assert np.allclose(est.grad_c, 2 * p.c, rtol=1e-4)
    assert np.all(est.grad_v == 0)


def test_fd_single_entry_and_mask_reproducible():
    p = _pred()
    est = estimate_grad_fd(lambda v, c: float(v.sum()), p, FdParams(num_entries=1, seed=4), "v")
    assert np.count_nonzero(est.grad_v) == 1 and est.evaluations_used == 2
    m1, m2 = fd_mask((5, 3), 7, 11), fd_mask((5, 3), 7, 11)
    assert np.array_equal(m1, m2) and len(set(m1.tolist())) == 7
    est = estimate_grad_fd(lambda v, c: float(v.sum()), p, FdParams(num_entries=7, seed=11), "v")
    nz = np.flatnonzero(est.grad_v)
    assert sorted(nz.tolist()) == sorted(m1.tolist())


def test_fd_params_invalid():
    with pytest.raises(InvalidParams):
        estimate_grad_fd(lambda v, c: 0.0, _pred(), FdParams(num_entries=16), "v")
    with pytest.raises(InvalidParams):
        estimate_grad_fd(lambda v, c: 0.0, _pred(), FdParams(h=0.0), "v")
    with pytest.raises(InvalidParams):
        estimate_grad_fd(lambda v, c: 0.0, _pred(), FdParams(num_entries=3), "x")


def test_fd_clamps_at_bounds():
    p = PredictionPair(np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]]))
    seen = []

    def q(v, c):
        seen.append(v.copy())
        return float(v.sum())

    est = estimate_grad_fd(q, p, FdParams(h=0.1, num_entries=2), "v")
    assert all(s.min() >= 0 and s.max() <= 1 for s in seen)
    assert est.clamped == 2
    # one-sided step over 2h
    assert np.allclose(est.grad_v, [[0.5, 0.5]])


def test_nes_constant_is_exactly_zero():
    est = estimate_grad_nes(lambda v, c: 0.7, _pred(), NesParams(num_directions=50), "v")
    assert np.array_equal(est.grad_v, np.zeros((5, 3)))
    assert est.evaluations_used == 50


def test_nes_params_invalid():
    for p in (NesParams(num_directions=3), NesParams(num_directions=0), NesParams(sigma=0)):
        with pytest.raises(InvalidParams):
            estimate_grad_nes(lambda v, c: 0.0, _pred(), p, "v")


def test_nes_deterministic_and_seed_sensitive():
    q = lambda v, c: float(np.sum(v ** 3))
    a = estimate_grad_nes(q, _pred(), NesParams(num_directions=20, seed=3), "v").grad_v
    b = estimate_grad_nes(q, _pred(), NesParams(num_directions=20, seed=3), "v").grad_v
    d = estimate_grad_nes(q, _pred(), NesParams(num_directions=20, seed=4), "v").grad_v
    assert np.array_equal(a, b) and not np.array_equal(a, d)
    assert cosine_similarity(a, b) == 1.0


def test_nes_affine_close_to_gradient():
    g = np.arange(1.0, 16.0).reshape(5, 3)
    q = lambda v, c: float(np.sum(g * v)) + 4.0
    est = estimate_grad_nes(q, _pred(), NesParams(sigma=1e-3, num_directions=20_000, seed=1), "v")
    assert cosine_similarity(est.grad_v, g) > 0.95


def test_estimators_do_not_modify_input():
    p = _pred()
    v0, c0 = p.v.copy(), p.c.copy()
    estimate_grad_fd(lambda v, c: float(v.sum() + c.sum()), p, FdParams(num_entries=15), "v")
    estimate_grad_fd(lambda v, c: float(v.sum() + c.sum()), p, FdParams(num_entries=15), "c")
    estimate_grad_nes(lambda v, c: float(v.sum() + c.sum()), p, NesParams(num_directions=10), "c")
    assert np.array_equal(p.v, v0) and np.array_equal(p.c, c0)


def test_bulk_q_matches_plain_callable(synth10k):
    gt, ds = synth10k
    sub = ds.subset(np.arange(400))
    qf = QFunction(sub.as_batch(), QEvalParams.per_capita(2.0, 400))
    p = PredictionPair(gt.v_gt[:400], gt.c_gt[:400])
    plain = lambda v, c: qf(v, c)
    for wrt in ("v", "c"):
        a = estimate_grad_fd(qf, p, FdParams(num_entries=300, seed=2), wrt)
        b = estimate_grad_fd(plain, p, FdParams(num_entries=300, seed=2), wrt)
        assert np.array_equal(a.grad(wrt), b.grad(wrt))
        a = estimate_grad_nes(qf, p, NesParams(num_directions=40, seed=2), wrt)
        b = estimate_grad_nes(plain, p, NesParams(num_directions=40, seed=2), wrt)
        assert np.array_equal(a.grad(wrt), b.grad(wrt))


def test_cosine_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert cosine_similarity(a, a) == 1.0
    assert cosine_similarity(a, -a) == -1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    with pytest.raises(ZeroVector):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ShapeMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


def test_estimate_dispatch():
    p = (np.full((2, 2), 0.5), np.ones((2, 2)))
    est = estimate(lambda v, c: float(v.sum()), p, "fd", FdParams(num_entries=4), "v")
    assert np.allclose(est.grad_v, 1.0)
    with pytest.raises(InvalidParams):
        estimate(lambda v, c: 0.0, p, "spsa", None, "v")
