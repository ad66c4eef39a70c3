"""Synthetic RCT data with known response probabilities.

The featureless generator follows the classic four-treatment setup: a base
response in U[0, 0.1], K-1 increments drawn from U[0, 0.2] and sorted in
descending order, and cost j for treatment j. The featured variant derives
the same per-user quantities from Gaussian features through a fixed random
network so that a model has something to learn.

Random streams: ``ground_truth`` (v_gt), ``treatments`` (t_i), ``outcomes``
(y_i), ``features`` (u_i) and ``feature_map`` (the network weights).
"""
import csv
from dataclasses import dataclass

import numpy as np

from .data import RctDataset, atomic_write_text
from .errors import InvalidK, ShapeMismatch, ValidationError, ZeroFeatureDim
from .rng import stream

BASE_HIGH = 0.1
INCREMENT_HIGH = 0.2
MAP_HIDDEN = 32
MAP_GAIN = 3.0


@dataclass(frozen=True, eq=False)
class SyntheticGroundTruth:
    v_gt: np.ndarray
    c_gt: np.ndarray

    def __post_init__(self):
        if self.v_gt.shape != self.c_gt.shape or self.v_gt.ndim != 2:
            raise ShapeMismatch("v_gt and c_gt must be matching n x K matrices")

    @property
    def num_treatments(self):
        return self.v_gt.shape[1]

    def __len__(self):
        return self.v_gt.shape[0]

    def violations(self, atol=1e-12):
        """Indices of rows breaking the monotone / diminishing-increment shape."""
        v = self.v_gt
        inc = np.diff(v, axis=1)
        bad = (v[:, 0] < -atol) | (v[:, 0] > BASE_HIGH + atol)
        bad |= np.any(inc < -atol, axis=1) | np.any(inc > INCREMENT_HIGH + atol, axis=1)
        if inc.shape[1] > 1:
            bad |= np.any(np.diff(inc, axis=1) > atol, axis=1)
        bad |= np.any(v > 1 + atol, axis=1)
        return np.flatnonzero(bad)


def _check_k(K):
    if int(K) != K or K < 2:
        raise InvalidK(f"K must be an integer >= 2, got {K}")


def _build(base, increments):
    """Sort increments descending per row and accumulate from the base value."""
    inc = -np.sort(-increments, axis=1)
    return np.cumsum(np.column_stack([base, inc]), axis=1)


def _costs(n, K):
    return np.tile(np.arange(1, K + 1, dtype=np.float64), (n, 1))


def generate_ground_truth(n, K, seed, purpose="ground_truth"):
    """Draw ``n`` featureless users' response probabilities for ``K`` treatments."""
    _check_k(K)
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = stream(seed, purpose)
    base = rng.uniform(0.0, BASE_HIGH, size=n)
    inc = rng.uniform(0.0, INCREMENT_HIGH, size=(n, K - 1))
    return SyntheticGroundTruth(_build(base, inc), _costs(n, K))


def sample_rct(gt, seed, features=None):
    """Assign treatments uniformly, draw Bernoulli responses, cost = c_gt[i, t_i]."""
    n, K = gt.v_gt.shape
    t = stream(seed, "treatments").integers(0, K, size=n)
    rows = np.arange(n)
    p = gt.v_gt[rows, t]
    y = (stream(seed, "outcomes").random(n) < p).astype(np.float64)
    z = gt.c_gt[rows, t]
    X = np.zeros((n, 0)) if features is None else features
    return RctDataset(X, t, y, z, K)


def feature_map(d, K, seed):
    """Weights of the fixed random network used by :func:`generate_featured`."""
    rng = stream(seed, "feature_map")
    W1 = rng.standard_normal((d, MAP_HIDDEN)) / np.sqrt(d)
    b1 = rng.uniform(-1.0, 1.0, size=MAP_HIDDEN)
    W2 = rng.standard_normal((MAP_HIDDEN, K)) * (MAP_GAIN / np.sqrt(MAP_HIDDEN))
    return W1, b1, W2


def ground_truth_from_features(X, K, seed):
    """Map features to a ground truth with the same shape constraints.

    ``s = sigmoid(tanh(X W1 + b1) W2)`` gives K numbers in (0, 1) per user;
    the first scales to the base response (times 0.1), the rest to the
    increments (times 0.2) before the usual sort-and-accumulate step.
    """
    W1, b1, W2 = feature_map(X.shape[1], K, seed)
    a = np.tanh(X @ W1 + b1) @ W2
    s = 1.0 / (1.0 + np.exp(-a))
    return SyntheticGroundTruth(
        _build(BASE_HIGH * s[:, 0], INCREMENT_HIGH * s[:, 1:]), _costs(len(X), K)
    )


def generate_featured(n, K, d, seed):
    _check_k(K)
    if d < 1:
        raise ZeroFeatureDim("featured data needs d >= 1")
    if n < 1:
        raise ValidationError("n must be >= 1")
    X = stream(seed, "features").standard_normal((n, d))
    gt = ground_truth_from_features(X, K, seed)
    return sample_rct(gt, seed, features=X), gt


def write_ground_truth(gt, path):
    K = gt.num_treatments
    header = [f"v{j}" for j in range(1, K + 1)] + [f"c{j}" for j in range(1, K + 1)]
    lines = [",".join(header)]
    for vr, cr in zip(gt.v_gt, gt.c_gt):
        lines.append(",".join(repr(float(x)) for x in np.concatenate([vr, cr])))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_ground_truth(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    K = len(header) // 2
    arr = np.asarray(body, dtype=np.float64).reshape(len(body), 2 * K)
    return SyntheticGroundTruth(arr[:, :K].copy(), arr[:, K:].copy())
