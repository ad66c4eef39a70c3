"""Multiple-choice knapsack machinery on predicted response/cost matrices.

Given a response matrix ``v`` and cost matrix ``c`` (B users x K treatments),
a Lagrange multiplier ``alpha`` induces the allocation that picks, per row,
the treatment maximizing ``v - alpha * c``. The per-capita response of that
allocation is estimated on RCT rows whose logged treatment matches it, and a
bisection on ``alpha`` finds the allocation whose matched per-capita cost hits
the budget. That response is Q(v, c).
"""
import itertools
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from .data import RctBatch, atomic_write_text
from .errors import (
    Infeasible,
    InfeasibleBudget,
    InstanceTooLarge,
    NegativeAlpha,
    ShapeMismatch,
    ValidationError,
)

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class PredictionPair:
    v: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if v.ndim != 2 or v.shape != c.shape:
            raise ShapeMismatch(f"v {v.shape} and c {c.shape} must be equal-shape matrices")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeMismatch("need B >= 1 and K >= 1")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValidationError("v entries must lie in [0, 1]")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValidationError("c entries must be finite and non-negative")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "c", c)

    @property
    def shape(self):
        return self.v.shape


@dataclass(frozen=True)
class QEvalParams:
    """Bisection settings.

    ``total_budget`` is T for the whole batch; the bisection targets the
    per-capita cost T / B. ``tolerance`` defaults to 1% of T / B.
    ``n_ary`` > 1 evaluates that many equally spaced interior points per
    iteration instead of one midpoint.
    """

    total_budget: float
    max_iters: int = 40
    alpha_max: float = 10.0
    tolerance: float = None
    n_ary: int = 1
    raise_infeasible: bool = True

    def __post_init__(self):
        if self.total_budget < 0:
            raise ValidationError("total_budget must be non-negative")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.alpha_max <= 0:
            raise ValidationError("alpha_max must be positive")
        if self.tolerance is not None and self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")
        if self.n_ary < 1:
            raise ValidationError("n_ary must be >= 1")

    @classmethod
    def per_capita(cls, budget, batch_size, **kw):
        return cls(total_budget=budget * batch_size, **kw)

    def with_budget(self, total_budget):
        return replace(self, total_budget=total_budget)

    def resolve(self, B):
        """(target per-capita cost, tolerance) for a batch of size B."""
        target = self.total_budget / B
        eps = self.tolerance if self.tolerance is not None else max(0.01 * target, 1e-12)
        return target, eps


@dataclass(frozen=True)
class CurvePoint:
    alpha: float
    per_capita_cost: float
    per_capita_response: float
    matched_count: int

    @property
    def empty_match(self):
        return self.matched_count == 0


class QResult(NamedTuple):
    q: float
    alpha: float
    trace: list


def _check_alpha(alpha):
    if alpha < 0:
        raise NegativeAlpha(f"alpha must be >= 0, got {alpha}")


def _coerce(pred):
    return pred if isinstance(pred, PredictionPair) else PredictionPair(*pred)


def _check_batch(pred, batch):
    if len(batch) != pred.v.shape[0]:
        raise ShapeMismatch(f"batch has {len(batch)} rows, predictions have {pred.v.shape[0]}")
    t = np.asarray(batch.treatment)
    if len(t) and (t.min() < 0 or t.max() >= pred.v.shape[1]):
        raise ShapeMismatch("batch treatments exceed the prediction width K")


def dual_objective(pred, T, alpha):
    """alpha * T + sum_i max_j (v_ij - alpha * c_ij)."""
    _check_alpha(alpha)
    pred = _coerce(pred)
    return float(alpha * T + np.max(pred.v - alpha * pred.c, axis=1).sum())


def choices(v, c, alpha):
    """Per-row chosen treatment (0-based): max score, then min cost, then min index."""
    s = v - alpha * c
    best = s.max(axis=1, keepdims=True)
    key = np.where(s == best, c, np.inf)
    return key.argmin(axis=1)


def recover_allocation(pred, alpha):
    """One-hot B x K allocation from the KKT conditions at ``alpha``."""
    _check_alpha(alpha)
    pred = _coerce(pred)
    ch = choices(pred.v, pred.c, alpha)
    x = np.zeros(pred.v.shape, dtype=np.int8)
    x[np.arange(len(ch)), ch] = 1
    return x


def matched_indices(x, batch):
    """Rows whose logged treatment equals the treatment assigned in ``x``."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != len(batch):
        raise ShapeMismatch("allocation and batch row counts differ")
    return np.flatnonzero(np.argmax(x, axis=1) == np.asarray(batch.treatment))


def eom_outcome(S, batch):
    """(V, C) means of response and cost over ``S``; (0.0, 0.0) for an empty set."""
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        return 0.0, 0.0
    return float(np.mean(batch.response[S])), float(np.mean(batch.cost[S]))


def curve_point(pred, batch, alpha):
    S = matched_indices(recover_allocation(pred, alpha), batch)
    V, C = eom_outcome(S, batch)
    return CurvePoint(float(alpha), C, V, int(S.size))


def evaluate_q(pred, batch, params):
    """Bisection on alpha until the matched per-capita cost is within tolerance.

    Returns ``QResult(q, alpha, trace)``. ``q`` is the matched per-capita
    response at the final evaluated point, whether or not the tolerance was
    met; ``trace`` lists every evaluated point in evaluation order. An empty
    matched set counts as cost 0 (so alpha is lowered) and shows up in the
    trace with ``matched_count == 0``.
    """
    pred = _coerce(pred)
    _check_batch(pred, batch)
    B = pred.v.shape[0]
    target, eps = params.resolve(B)
    lo, hi = 0.0, float(params.alpha_max)
    n = params.n_ary
    trace = []
    lowered = False
    final = None
    for _ in range(params.max_iters):
        pts = [curve_point(pred, batch, lo + (hi - lo) * k / (n + 1)) for k in range(1, n + 1)]
        trace.extend(pts)
        hit = next((p for p in pts if abs(p.per_capita_cost - target) <= eps), None)
        if hit is not None:
            return QResult(hit.per_capita_response, hit.alpha, trace)
        final = min(pts, key=lambda p: abs(p.per_capita_cost - target)) if n > 1 else pts[0]
        first_low = next((k for k, p in enumerate(pts) if p.per_capita_cost <= target), None)
        if first_low is None:
            lo = pts[-1].alpha
        else:
            hi = pts[first_low].alpha
            lo = pts[first_low - 1].alpha if first_low > 0 else lo
            lowered = True
    if not lowered:
        top = curve_point(pred, batch, params.alpha_max)
        if top.per_capita_cost - target > eps and params.raise_infeasible:
            raise InfeasibleBudget(
                f"per-capita cost {top.per_capita_cost:.6g} at alpha_max exceeds budget {target:.6g}"
            )
    return QResult(final.per_capita_response, final.alpha, trace)


def cost_value_curve(pred, batch, alpha_grid):
    """One :class:`CurvePoint` per alpha in ``alpha_grid`` (kept in the given order)."""
    pred = _coerce(pred)
    _check_batch(pred, batch)
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValidationError("alpha_grid is empty")
    for a in grid:
        _check_alpha(a)
    return [curve_point(pred, batch, a) for a in grid]


CURVE_COLUMNS = ("alpha", "per_capita_cost", "per_capita_response", "matched_count")


def curve_to_text(points):
    lines = [",".join(CURVE_COLUMNS)]
    for p in points:
        lines.append(
            f"{p.alpha!r},{p.per_capita_cost!r},{p.per_capita_response!r},{p.matched_count}"
        )
    return "\n".join(lines) + "\n"


def write_curve(points, path):
    atomic_write_text(path, curve_to_text(points))


def read_curve(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != CURVE_COLUMNS:
            raise ValidationError(f"unexpected curve header {header}")
        out = []
        for line in fh:
            a, c, v, m = line.strip().split(",")
            out.append(CurvePoint(float(a), float(c), float(v), int(m)))
    return out


def brute_force_oracle(pred, T):
    """Exact MCKP optimum by enumerating all K**B allocations.

    A combination is feasible when its summed cost is at most
    ``T + 1e-9 * max(1, |T|)``; the slack absorbs summation-order rounding.
    """
    pred = _coerce(pred)
    B, K = pred.v.shape
    if K**B > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"K**B = {K**B} exceeds {BRUTE_FORCE_LIMIT}")
    slack = 1e-9 * max(1.0, abs(T))
    rows = np.arange(B)
    best_val, best_ch = -math.inf, None
    chunk = 1 << 16
    combos = itertools.product(range(K), repeat=B)
    while True:
        block = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(combos, chunk)), dtype=np.int64
        ).reshape(-1, B)
        if block.size == 0:
            break
        vals = pred.v[rows, block].sum(axis=1)
        costs = pred.c[rows, block].sum(axis=1)
        vals = np.where(costs <= T + slack, vals, -math.inf)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_ch = float(vals[k]), block[k]
    if best_ch is None:
        raise Infeasible(f"no allocation fits within budget {T}")
    x = np.zeros((B, K), dtype=np.int8)
    x[rows, best_ch] = 1
    return best_val, x


class QFunction:
    """Q(v, c) bound to one RCT batch and bisection settings.

    Calling the object evaluates Q through the compiled kernel; ``many`` and
    ``entries`` evaluate stacks of perturbed inputs in one call. ``calls``
    counts Q evaluations. Plain bisection only; ``n_ary > 1`` falls back to
    :func:`evaluate_q`.
    """

    def __init__(self, batch, params):
        self.batch = batch
        self.params = params
        self._t = np.ascontiguousarray(batch.treatment, dtype=np.int64)
        self._y = np.ascontiguousarray(batch.response, dtype=np.float64)
        self._z = np.ascontiguousarray(batch.cost, dtype=np.float64)
        self.target, self.eps = params.resolve(len(batch))
        self.calls = 0

    def _args(self):
        p = self.params
        return (self._t, self._y, self._z, self.target, self.eps,
                float(p.alpha_max), int(p.max_iters))

    def _check(self, status):
        if self.params.raise_infeasible and np.any(status == _kernels.STATUS_INFEASIBLE):
            raise InfeasibleBudget("per-capita cost at alpha_max exceeds the budget")

    def result(self, v, c):
        """(Q, alpha_final) for one input pair."""
        v = np.ascontiguousarray(v, dtype=np.float64)
        c = np.ascontiguousarray(c, dtype=np.float64)
        if v.shape != c.shape or v.shape[0] != len(self._t):
            raise ShapeMismatch("v/c shape does not match the batch")
        self.calls += 1
        if self.params.n_ary > 1:
            r = evaluate_q(PredictionPair(v, c), self.batch, self.params)
            return r.q, r.alpha
        q, a, s = _kernels.bisect(v, c, *self._args(), -1, 0, 0.0, 0)
        self._check(np.array([s]))
        return q, a

    def __call__(self, v, c):
        return self.result(v, c)[0]

    def many(self, vs, cs):
        """Q for stacked inputs of shape (N, B, K); one of ``vs``/``cs`` may be (B, K)."""
        vs = np.asarray(vs, dtype=np.float64)
        cs = np.asarray(cs, dtype=np.float64)
        vs = vs[None] if vs.ndim == 2 else vs
        cs = cs[None] if cs.ndim == 2 else cs
        N = max(len(vs), len(cs))
        if self.params.n_ary > 1:
            out = [self(vs[k if len(vs) > 1 else 0], cs[k if len(cs) > 1 else 0])
                   for k in range(N)]
            return np.asarray(out)
        q, _, s = _kernels.q_stack(
            np.ascontiguousarray(vs), np.ascontiguousarray(cs), *self._args()
        )
        self.calls += N
        self._check(s)
        return q

    def entries(self, v, c, rows, cols, vals, which):
        """Q with entry (rows[k], cols[k]) of v (``which='v'``) or c set to vals[k]."""
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        vals = np.ascontiguousarray(vals, dtype=np.float64)
        v = np.ascontiguousarray(v, dtype=np.float64)
        c = np.ascontiguousarray(c, dtype=np.float64)
        if self.params.n_ary > 1:
            out = []
            for r, k, x in zip(rows, cols, vals):
                vv, cc = v.copy(), c.copy()
                (vv if which == "v" else cc)[r, k] = x
                out.append(self(vv, cc))
            return np.asarray(out)
        q, _, s = _kernels.q_entries(
            v, c, *self._args(), rows, cols, vals, 0 if which == "v" else 1
        )
        self.calls += len(rows)
        self._check(s)
        return q


def q_value(pred, batch, params):
    """Q via the compiled kernel; same value as ``evaluate_q(...).q``."""
    pred = _coerce(pred)
    _check_batch(pred, batch)
    return QFunction(batch, params).result(pred.v, pred.c)
