"""Zeroth-order gradient estimates of a black-box Q(v, c).

Two estimators, each perturbing one matrix (``wrt='v'`` or ``wrt='c'``):

* masked central differences over F' randomly chosen entries;
* antithetic Gaussian smoothing (NES) with N' directions.

Perturbed v entries are clamped to [0, 1] and c entries to [0, inf) before Q
is called. ``q`` may be any callable ``q(v, c) -> float``; objects that also
provide ``many``/``entries`` (see :class:`budgetalloc.allocator.QFunction`)
are evaluated in bulk.
"""
from dataclasses import dataclass

import numpy as np

from .allocator import PredictionPair
from .errors import InvalidParams, ShapeMismatch, ZeroVector
from .rng import stream

NES_CHUNK = 32


@dataclass(frozen=True, eq=False)
class GradEstimate:
    grad_v: np.ndarray
    grad_c: np.ndarray
    evaluations_used: int
    clamped: int = 0

    def grad(self, wrt):
        return self.grad_v if wrt == "v" else self.grad_c


@dataclass(frozen=True)
class FdParams:
    h: float = 3e-4
    num_entries: int = 4000
    seed: int = 0


@dataclass(frozen=True)
class NesParams:
    sigma: float = 1e-3
    num_directions: int = 2000
    seed: int = 0


def _bounds(wrt):
    if wrt == "v":
        return 0.0, 1.0
    if wrt == "c":
        return 0.0, np.inf
    raise InvalidParams(f"wrt must be 'v' or 'c', got {wrt!r}")


def _pack(wrt, g, shape, evals, clamped):
    z = np.zeros(shape)
    gv, gc = (g, z) if wrt == "v" else (z, g)
    return GradEstimate(gv, gc, int(evals), int(clamped))


def fd_mask(shape, num_entries, seed):
    """Flat indices of the F' sampled entries (without replacement)."""
    size = int(np.prod(shape))
    return stream(seed, "fd_mask").choice(size, size=num_entries, replace=False)


def estimate_grad_fd(q, pred, params, wrt="v"):
    """Central differences (Q(x + h e_l) - Q(x - h e_l)) / 2h on F' random entries.

    Entries outside the sampled mask are exactly zero. The divisor stays 2h
    even when clamping shortens a step.
    """
    lo, hi = _bounds(wrt)
    B, K = pred.v.shape
    if params.h <= 0 or not 1 <= params.num_entries <= B * K:
        raise InvalidParams("need h > 0 and 1 <= num_entries <= B*K")
    v, c = pred.v, pred.c
    base = v if wrt == "v" else c
    flat = fd_mask(base.shape, params.num_entries, params.seed)
    rows, cols = np.divmod(flat, K)
    x0 = base[rows, cols]
    up_raw, dn_raw = x0 + params.h, x0 - params.h
    up, dn = np.clip(up_raw, lo, hi), np.clip(dn_raw, lo, hi)
    clamped = int(np.sum(up != up_raw) + np.sum(dn != dn_raw))

    if hasattr(q, "entries"):
        q_up = q.entries(v, c, rows, cols, up, wrt)
        q_dn = q.entries(v, c, rows, cols, dn, wrt)
    else:
        q_up = np.empty(len(flat))
        q_dn = np.empty(len(flat))
        work = base.copy()
        for k, (r, col) in enumerate(zip(rows, cols)):
            work[r, col] = up[k]
            q_up[k] = q(work, c) if wrt == "v" else q(v, work)
            work[r, col] = dn[k]
            q_dn[k] = q(work, c) if wrt == "v" else q(v, work)
            work[r, col] = x0[k]
    g = np.zeros(base.shape)
    g[rows, cols] = (q_up - q_dn) / (2.0 * params.h)
    return _pack(wrt, g, base.shape, 2 * len(flat), clamped)


def estimate_grad_nes(q, pred, params, wrt="v"):
    """Antithetic NES: (1 / (sigma N')) sum_i delta_i Q(x + sigma delta_i).

    N'/2 standard-normal directions are drawn and each is paired with its
    negation, so every pair contributes ``delta (Q(x+s d) - Q(x-s d))``.
    Directions are drawn in a fixed order from the ``nes`` stream of
    ``params.seed``.
    """
    lo, hi = _bounds(wrt)
    N = params.num_directions
    if params.sigma <= 0 or N < 2 or N % 2:
        raise InvalidParams("need sigma > 0 and an even num_directions >= 2")
    v, c = pred.v, pred.c
    base = v if wrt == "v" else c
    rng = stream(params.seed, "nes")
    half = N // 2
    g = np.zeros(base.shape)
    clamped = 0
    bulk = hasattr(q, "many")
    done = 0
    while done < half:
        m = min(NES_CHUNK, half - done)
        d = rng.standard_normal((m,) + base.shape)
        plus_raw = base + params.sigma * d
        minus_raw = base - params.sigma * d
        plus = np.clip(plus_raw, lo, hi)
        minus = np.clip(minus_raw, lo, hi)
        clamped += int(np.sum(plus != plus_raw) + np.sum(minus != minus_raw))
        stack = np.concatenate([plus, minus])
        if bulk:
            vals = q.many(stack, c) if wrt == "v" else q.many(v, stack)
        else:
            vals = np.array([q(s, c) if wrt == "v" else q(v, s) for s in stack])
        diff = vals[:m] - vals[m:]
        for k in range(m):
            if diff[k] != 0.0:
                g += diff[k] * d[k]
        done += m
    g /= params.sigma * N
    return _pack(wrt, g, base.shape, N, clamped)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch("inputs must have the same shape")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def estimate(q, pred, method, params, wrt):
    if not isinstance(pred, PredictionPair):
        pred = PredictionPair(*pred)
    if method == "fd":
        return estimate_grad_fd(q, pred, params, wrt)
    if method == "nes":
        return estimate_grad_nes(q, pred, params, wrt)
    raise InvalidParams(f"unknown estimator {method!r}")
