"""RCT datasets: container types, delimited-text I/O, splitting, batching and
feature standardization.

Treatments are 1-based in files and 0-based in memory. The conversion happens
only in :func:`load_dataset` and :func:`write_dataset`.
"""
import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyDataset,
    MissingColumn,
    NegativeCost,
    NonBinaryResponse,
    ParseError,
    ShapeMismatch,
    TreatmentOutOfRange,
    ValidationError,
    ZeroFeatureDim,
)
from .rng import stream


@dataclass(frozen=True)
class RctSample:
    features: np.ndarray
    treatment: int  # 0-based
    response: int
    cost: float


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RctBatch:
    """Columnar block of RCT rows. ``treatment`` is 0-based."""

    features: np.ndarray
    treatment: np.ndarray
    response: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        n = len(self.treatment)
        if not (len(self.features) == len(self.response) == len(self.cost) == n):
            raise ShapeMismatch(
                "features, treatment, response and cost must share the leading dimension"
            )

    def __len__(self):
        return len(self.treatment)

    @property
    def size(self):
        return len(self.treatment)


@dataclass(frozen=True, eq=False)
class RctDataset:
    """Immutable RCT dataset stored column-wise.

    Arrays are coerced to float64 (features, response, cost) and int64
    (treatment) and marked read-only.
    """

    features: np.ndarray
    treatment: np.ndarray
    response: np.ndarray
    cost: np.ndarray
    num_treatments: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.treatment)
        if t.size and not np.issubdtype(t.dtype, np.integer):
            if not np.all(t == np.round(t)):
                raise TreatmentOutOfRange("treatments must be integers")
        t = t.astype(np.int64)
        y = np.asarray(self.response, dtype=np.float64)
        z = np.asarray(self.cost, dtype=np.float64)
        n = len(t)
        if feats.ndim == 1 and n == 0:
            feats = feats.reshape(0, 0)
        if feats.ndim != 2 or feats.shape[0] != n or len(y) != n or len(z) != n:
            raise ShapeMismatch("all columns must have the same number of rows")
        K = int(self.num_treatments)
        if K < 1:
            raise ValidationError("num_treatments must be >= 1")
        if n and (t.min() < 0 or t.max() >= K):
            raise TreatmentOutOfRange(f"treatment outside 1..{K}")
        if n and not np.all((y == 0) | (y == 1)):
            raise NonBinaryResponse("responses must be 0 or 1")
        if n and (np.any(z < 0) or not np.all(np.isfinite(z))):
            raise NegativeCost("costs must be finite and non-negative")
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "treatment", _readonly(t))
        object.__setattr__(self, "response", _readonly(y))
        object.__setattr__(self, "cost", _readonly(z))
        object.__setattr__(self, "num_treatments", K)

    def __len__(self):
        return len(self.treatment)

    @property
    def size(self):
        return len(self.treatment)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def sample(self, i):
        return RctSample(
            features=self.features[i],
            treatment=int(self.treatment[i]),
            response=int(self.response[i]),
            cost=float(self.cost[i]),
        )

    def samples(self):
        return [self.sample(i) for i in range(len(self))]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return RctDataset(
            self.features[index],
            self.treatment[index],
            self.response[index],
            self.cost[index],
            self.num_treatments,
            dict(self.meta),
        )

    def as_batch(self, index=None):
        if index is None:
            return RctBatch(self.features, self.treatment, self.response, self.cost)
        index = np.asarray(index, dtype=np.int64)
        return RctBatch(
            self.features[index],
            self.treatment[index],
            self.response[index],
            self.cost[index],
        )

    def with_features(self, features):
        return RctDataset(
            features, self.treatment, self.response, self.cost,
            self.num_treatments, dict(self.meta),
        )

    def equals(self, other):
        return (
            self.num_treatments == other.num_treatments
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.response, other.response)
            and np.array_equal(self.cost, other.cost)
        )


def concat(datasets):
    datasets = list(datasets)
    K = max(ds.num_treatments for ds in datasets)
    return RctDataset(
        np.concatenate([ds.features for ds in datasets]),
        np.concatenate([ds.treatment for ds in datasets]),
        np.concatenate([ds.response for ds in datasets]),
        np.concatenate([ds.cost for ds in datasets]),
        K,
    )


# ---------------------------------------------------------------------------
# on-disk format

@dataclass(frozen=True)
class Schema:
    """Column mapping for delimited dataset files.

    Features come either from ``feature_columns`` (one column each) or from
    ``feature_column`` (one column of space-separated reals). Exactly one of
    the two may be set; neither means a featureless dataset.
    ``treatment_offset`` is added to the stored treatment to obtain the
    1-based level (CRITEO stores 0/1, so it uses 1).
    """

    treatment: str = "treatment"
    response: str = "response"
    cost: str = "cost"
    feature_columns: tuple = ()
    feature_column: str = None
    num_treatments: int = None
    treatment_offset: int = 0
    delimiter: str = ","

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if self.feature_columns and self.feature_column:
            raise ValidationError("set feature_columns or feature_column, not both")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "feature_columns" in d:
            d["feature_columns"] = tuple(d["feature_columns"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)


# CRITEO-UPLIFT v2: f0..f11 dense features, binary treatment, visit as cost,
# conversion as response.
CRITEO_SCHEMA = Schema(
    treatment="treatment",
    response="conversion",
    cost="visit",
    feature_columns=tuple(f"f{i}" for i in range(12)),
    num_treatments=2,
    treatment_offset=1,
)


def _parse_float(s):
    s = s.strip()
    if not s:
        raise ValueError("empty")
    x = float(s)
    if not math.isfinite(x):
        raise ValueError("non-finite")
    return x


def load_dataset(path, schema=None):
    """Read a delimited-text RCT file.

    Any row that fails to parse (missing value, non-numeric field, wrong
    field count) causes a :class:`ParseError` listing every offending line;
    nothing is skipped silently. Domain violations raise the specific error
    types (:class:`NegativeCost`, :class:`NonBinaryResponse`, ...).
    """
    schema = schema or Schema()
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path}: no header row") from None
        pos = {name: i for i, name in enumerate(header)}
        needed = [schema.treatment, schema.response, schema.cost]
        needed += list(schema.feature_columns)
        if schema.feature_column:
            needed.append(schema.feature_column)
        missing = [c for c in needed if c not in pos]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")

        it, ir, ic = pos[schema.treatment], pos[schema.response], pos[schema.cost]
        fidx = [pos[c] for c in schema.feature_columns]
        fcol = pos[schema.feature_column] if schema.feature_column else None

        feats, ts, ys, zs = [], [], [], []
        bad = []
        d = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(header):
                    raise ValueError("field count")
                t = _parse_float(row[it])
                y = _parse_float(row[ir])
                z = _parse_float(row[ic])
                if fcol is not None:
                    f = [_parse_float(x) for x in row[fcol].split()]
                else:
                    f = [_parse_float(row[j]) for j in fidx]
                if d is None:
                    d = len(f)
                elif len(f) != d:
                    raise ValueError("feature length")
            except ValueError:
                bad.append(lineno)
                continue
            ts.append(t)
            ys.append(y)
            zs.append(z)
            feats.append(f)
    if bad:
        raise ParseError(
            f"{path}: {len(bad)} row(s) failed to parse (first at line {bad[0]})",
            rows=bad,
        )
    if not ts:
        raise EmptyDataset(f"{path}: no data rows")

    t = np.asarray(ts) + schema.treatment_offset
    if not np.all(t == np.round(t)):
        raise TreatmentOutOfRange(f"{path}: non-integer treatment")
    t = t.astype(np.int64)
    if t.min() < 1:
        raise TreatmentOutOfRange(f"{path}: treatment below 1")
    K = schema.num_treatments if schema.num_treatments is not None else int(t.max())
    if t.max() > K:
        raise TreatmentOutOfRange(f"{path}: treatment {t.max()} exceeds K={K}")
    y = np.asarray(ys)
    if not np.all((y == 0) | (y == 1)):
        raise NonBinaryResponse(f"{path}: response not in {{0,1}}")
    z = np.asarray(zs)
    if np.any(z < 0):
        raise NegativeCost(f"{path}: negative cost")
    X = np.asarray(feats, dtype=np.float64).reshape(len(ts), d or 0)
    return RctDataset(X, t - 1, y, z, K, {"source": os.fspath(path)})


def _fmt(x):
    return repr(float(x))


def write_dataset(dataset, path, schema=None):
    """Write ``dataset`` in the delimited format read by :func:`load_dataset`.

    Floats are written with ``repr`` so a reload is bit-identical.
    """
    schema = schema or Schema()
    d = dataset.feature_dim
    if schema.feature_column:
        fnames = [schema.feature_column]
    elif schema.feature_columns:
        if len(schema.feature_columns) != d:
            raise ShapeMismatch("schema feature_columns length differs from feature_dim")
        fnames = list(schema.feature_columns)
    else:
        fnames = [f"x{j}" for j in range(d)]
    header = fnames + [schema.treatment, schema.response, schema.cost]
    rows = []
    for i in range(len(dataset)):
        f = dataset.features[i]
        if schema.feature_column:
            fv = [" ".join(_fmt(x) for x in f)]
        else:
            fv = [_fmt(x) for x in f]
        t = int(dataset.treatment[i]) + 1 - schema.treatment_offset
        rows.append(fv + [str(t), str(int(dataset.response[i])), _fmt(dataset.cost[i])])
    atomic_write_text(path, _rows_to_text([header] + rows, schema.delimiter))


def _rows_to_text(rows, delimiter=","):
    return "".join(delimiter.join(r) + "\n" for r in rows)


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# splitting, batching, standardization

def split_indices(n, fraction, seed):
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0 < fraction < 1:
        raise ValidationError("fraction must lie in (0, 1)")
    # guard against 0.7 * 10 = 7.000000000000001
    n_first = min(n, math.ceil(round(fraction * n, 9)))
    perm = stream(seed, "split").permutation(n)
    return perm[:n_first], perm[n_first:]


def split(dataset, fraction, seed):
    """Random disjoint split into ``ceil(fraction * n)`` rows and the rest."""
    first, rest = split_indices(len(dataset), fraction, seed)
    return dataset.subset(first), dataset.subset(rest)


def batch_indices(n, batch_size, shuffle_seed):
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    perm = stream(shuffle_seed, "shuffle").permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(dataset, batch_size, shuffle_seed):
    """One epoch of batches in a seeded random order; the last may be partial."""
    return [dataset.as_batch(idx) for idx in batch_indices(len(dataset), batch_size, shuffle_seed)]


@dataclass(frozen=True)
class FeatureTransform:
    """Per-feature affine map ``(x - mean) / scale`` fitted on training data."""

    mean: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.mean):
            raise ShapeMismatch("feature dimension differs from the fitted transform")
        out = (X - self.mean) / self.scale
        out[:, self.degenerate] = 0.0
        return out

    def inverse(self, Xs):
        return np.asarray(Xs, dtype=np.float64) * self.scale + self.mean

    def transform_dataset(self, dataset):
        return dataset.with_features(self.apply(dataset.features))

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "degenerate": self.degenerate.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["scale"], dtype=np.float64),
            np.asarray(d["degenerate"], dtype=bool),
        )


def standardize_features(train):
    """Fit zero-mean/unit-variance scaling on ``train``; zero-variance columns map to 0."""
    if train.feature_dim < 1:
        raise ZeroFeatureDim("dataset has no features to standardize")
    if len(train) == 0:
        raise EmptyDataset("cannot standardize an empty dataset")
    X = train.features
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = std == 0
    scale = np.where(degenerate, 1.0, std)
    tf = FeatureTransform(mean, scale, degenerate)
    return tf, tf.transform_dataset(train)
