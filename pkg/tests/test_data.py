import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budgetalloc.data import (
    CRITEO_SCHEMA,
    RctBatch,
    RctDataset,
    Schema,
    batch_indices,
    batches,
    concat,
    load_dataset,
    split,
    standardize_features,
    write_dataset,
)
from budgetalloc.errors import (
    EmptyDataset,
    MissingColumn,
    NegativeCost,
    NonBinaryResponse,
    ParseError,
    ShapeMismatch,
    TreatmentOutOfRange,
    ZeroFeatureDim,
)


def _write(path, text):
    path.write_text(text)
    return path


def _ds(n, d=2, K=3, seed=0):
    r = np.random.default_rng(seed)
    return RctDataset(r.normal(size=(n, d)), r.integers(0, K, n), r.integers(0, 2, n),
                      r.uniform(0, 3, n), K)


def test_two_row_file(tmp_path):
    f = _write(tmp_path / "a.csv", "x0,x1,treatment,response,cost\n0.5,1,1,0,0.0\n2,3,2,1,2.0\n")
    ds = load_dataset(f, Schema(feature_columns=("x0", "x1")))
    assert ds.num_treatments == 2
    assert ds.feature_dim == 2
    assert list(ds.treatment) == [0, 1]  # 0-based in memory
    assert list(ds.response) == [0, 1]
    assert list(ds.cost) == [0.0, 2.0]
    s = ds.sample(1)
    assert (s.treatment, s.response, s.cost) == (1, 1, 2.0)


def test_negative_cost(tmp_path):
    f = _write(tmp_path / "a.csv", "treatment,response,cost\n1,0,1\n2,1,-1\n")
    with pytest.raises(NegativeCost):
        load_dataset(f)


@pytest.mark.parametrize("body,err", [
    ("1,2,1\n", NonBinaryResponse),
    ("0,1,1\n", TreatmentOutOfRange),
    ("1.5,1,1\n", TreatmentOutOfRange),
])
def test_domain_errors(tmp_path, body, err):
    f = _write(tmp_path / "a.csv", "treatment,response,cost\n" + body)
    with pytest.raises(err):
        load_dataset(f)


def test_missing_column(tmp_path):
    f = _write(tmp_path / "a.csv", "treatment,response\n1,0\n")
    with pytest.raises(MissingColumn):
        load_dataset(f)


def test_empty(tmp_path):
    with pytest.raises(EmptyDataset):
        load_dataset(_write(tmp_path / "a.csv", "treatment,response,cost\n"))
    with pytest.raises(EmptyDataset):
        load_dataset(_write(tmp_path / "b.csv", ""))


def test_parse_failures_are_reported_not_skipped(tmp_path):
    f = _write(tmp_path / "a.csv",
               "treatment,response,cost\n1,0,1\n2,,1\n1,0,abc\n1,0\n2,1,2\n")
    with pytest.raises(ParseError) as ei:
        load_dataset(f)
    assert ei.value.rows == [3, 4, 5]
    assert ei.value.count == 3


def test_pinned_k_allows_absent_level(tmp_path):
    f = _write(tmp_path / "a.csv", "treatment,response,cost\n1,0,1\n2,1,2\n")
    ds = load_dataset(f, Schema(num_treatments=4))
    assert ds.num_treatments == 4
    with pytest.raises(TreatmentOutOfRange):
        load_dataset(f, Schema(num_treatments=1))


def test_space_separated_feature_column(tmp_path):
    f = _write(tmp_path / "a.csv", "feat,treatment,response,cost\n1 2 3,1,0,1\n4 5 6,2,1,2\n")
    ds = load_dataset(f, Schema(feature_column="feat"))
    assert ds.features.tolist() == [[1, 2, 3], [4, 5, 6]]
    bad = _write(tmp_path / "b.csv", "feat,treatment,response,cost\n1 2 3,1,0,1\n4 5,2,1,2\n")
    with pytest.raises(ParseError):
        load_dataset(bad, Schema(feature_column="feat"))


def test_criteo_mapping(tmp_path):
    r = np.random.default_rng(3)
    n = 1000
    cols = [f"f{i}" for i in range(12)] + ["treatment", "conversion", "visit", "exposure"]
    lines = [",".join(cols)]
    for _ in range(n):
        feats = [repr(float(x)) for x in r.normal(size=12)]
        visit = int(r.random() < 0.05)
        conv = int(visit and r.random() < 0.1)
        lines.append(",".join(feats + [str(int(r.integers(0, 2))), str(conv), str(visit), "0"]))
    f = _write(tmp_path / "criteo.csv", "\n".join(lines) + "\n")
    ds = load_dataset(f, CRITEO_SCHEMA)
    assert len(ds) == n
    assert ds.num_treatments == 2
    assert ds.feature_dim == 12


def test_round_trip(tmp_path):
    ds = _ds(40, d=3)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_dataset(ds, p1)
    back = load_dataset(p1, Schema(feature_columns=("x0", "x1", "x2"), num_treatments=3))
    assert back.equals(ds)
    write_dataset(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_criteo_offset(tmp_path):
    ds = _ds(20, d=12, K=2)
    p = tmp_path / "c.csv"
    write_dataset(ds, p, CRITEO_SCHEMA)
    assert load_dataset(p, CRITEO_SCHEMA).equals(ds)


def test_dataset_is_immutable():
    ds = _ds(5)
    with pytest.raises(ValueError):
        ds.cost[0] = 1.0


def test_batch_shape_check():
    with pytest.raises(ShapeMismatch):
        RctBatch(np.zeros((3, 1)), np.zeros(3), np.zeros(2), np.zeros(3))


def test_split_sizes_and_determinism():
    ds = _ds(10)
    a, b = split(ds, 0.7, seed=1)
    assert (len(a), len(b)) == (7, 3)
    a2, b2 = split(ds, 0.7, seed=1)
    assert a.equals(a2) and b.equals(b2)


def test_split_ceiling_leaves_empty_part():
    a, b = split(_ds(3), 0.999, seed=0)
    assert (len(a), len(b)) == (3, 0)
    assert b.feature_dim == 2


def test_split_empty():
    with pytest.raises(EmptyDataset):
        split(_ds(0), 0.5, 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 60), frac=st.floats(0.01, 0.99), seed=st.integers(0, 2**31))
def test_split_is_permutation(n, frac, seed):
    ds = _ds(n, seed=n)
    a, b = split(ds, frac, seed)
    assert len(a) == math.ceil(round(frac * n, 9))
    both = concat([a, b])
    key = lambda d: sorted(map(tuple, np.column_stack([d.features, d.treatment, d.cost])))
    assert key(both) == key(ds)


def test_batches_sizes():
    sizes = [len(ix) for ix in batch_indices(25_000, 10_000, 4)]
    assert sizes == [10_000, 10_000, 5_000]


def test_batches_deterministic_and_partition():
    ds = _ds(53)
    first = [b.cost.copy() for b in batches(ds, 10, 9)]
    again = [b.cost.copy() for b in batches(ds, 10, 9)]
    assert all(np.array_equal(x, y) for x, y in zip(first, again))
    idx = np.concatenate(batch_indices(53, 10, 9))
    assert sorted(idx.tolist()) == list(range(53))


def test_standardize_examples():
    ds = RctDataset(np.array([[1.0, 0.0], [1.0, 2.0]]), [0, 1], [0, 1], [1, 2], 2)
    tf, out = standardize_features(ds)
    assert out.features[:, 0].tolist() == [0.0, 0.0]
    assert out.features[:, 1].tolist() == [-1.0, 1.0]
    const = RctDataset(np.ones((3, 1)), [0, 1, 0], [0, 0, 1], [1, 2, 1], 2)
    assert standardize_features(const)[1].features.ravel().tolist() == [0, 0, 0]


def test_standardize_uses_train_statistics():
    train = _ds(100, seed=1)
    test = _ds(50, seed=2).with_features(_ds(50, seed=2).features * 5 + 3)
    tf, _ = standardize_features(train)
    out = tf.transform_dataset(test)
    mu, sd = train.features.mean(0), train.features.std(0)
    assert np.allclose(out.features, (test.features - mu) / sd)


def test_standardize_inverse():
    ds = _ds(30, d=4)
    tf, out = standardize_features(ds)
    assert np.max(np.abs(tf.inverse(out.features) - ds.features)) < 1e-9
    assert np.allclose(out.features.mean(0), 0) and np.allclose(out.features.std(0), 1)


def test_standardize_needs_features():
    with pytest.raises(ZeroFeatureDim):
        standardize_features(RctDataset(np.zeros((2, 0)), [0, 1], [0, 1], [1, 2], 2))
