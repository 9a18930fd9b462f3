import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pmffnn.data import (
    DatasetTable,
    bayes_accuracy,
    load_csv,
    mask_group,
    save_csv,
    standardize,
    synth_blockwise,
    train_test_split,
)
from pmffnn.errors import CellParseError, DomainError, EmptyFileError, MissingColumnError, MissingFileError

# --- CSV -----------------------------------------------------------------


def test_load_small(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,y,b\n1.5,x,2\n-3,z,4e-1\n")
    table = load_csv(path, "y")
    np.testing.assert_array_equal(table.features, [[1.5, 2.0], [-3.0, 0.4]])
    np.testing.assert_array_equal(table.targets, [0, 1])
    assert table.feature_names == ["a", "b"]
    assert table.classes == ["x", "z"]


def test_first_appearance_mapping(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("f,label\n0,b\n1,a\n2,b\n")
    table = load_csv(path, "label")
    np.testing.assert_array_equal(table.targets, [0, 1, 0])
    assert table.classes == ["b", "a"]


def test_bad_cell_reports_row_and_column(tmp_path):
    path = tmp_path / "t.csv"
    rows = ["1,2,0"] * 6 + ["1,abc,0"]
    path.write_text("left,right,y\n" + "\n".join(rows) + "\n")
    with pytest.raises(CellParseError) as info:
        load_csv(path, "y")
    assert info.value.row == 7 and info.value.column == "right"
    assert "row 7" in str(info.value) and "right" in str(info.value)


def test_csv_errors_are_distinct(tmp_path):
    with pytest.raises(MissingFileError):
        load_csv(tmp_path / "nope.csv", "y")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyFileError):
        load_csv(empty, "y")
    header_only = tmp_path / "h.csv"
    header_only.write_text("a,y\n")
    with pytest.raises(EmptyFileError):
        load_csv(header_only, "y")
    ok = tmp_path / "ok.csv"
    ok.write_text("a,b\n1,2\n")
    with pytest.raises(MissingColumnError):
        load_csv(ok, "y")
    nan = tmp_path / "nan.csv"
    nan.write_text("a,y\nnan,1\n")
    with pytest.raises(CellParseError):
        load_csv(nan, "y")


def test_regression_targets(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,y\n1,0.5\n2,1.5\n")
    table = load_csv(path, "y", task="regression")
    np.testing.assert_array_equal(table.targets, [[0.5], [1.5]])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_csv_round_trip(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    y = np.arange(x.shape[0]) % 3
    table = DatasetTable(x, y, [f"c{j}" for j in range(x.shape[1])], classes=["p", "q", "r"])
    save_csv(table, path)
    back = load_csv(path, "target", classes=["p", "q", "r"])
    np.testing.assert_allclose(back.features, x, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(back.targets, y)


# --- preprocessing -------------------------------------------------------


def _table(x):
    x = np.asarray(x, dtype=float)
    return DatasetTable(x, np.zeros(len(x), dtype=np.int64), [f"c{j}" for j in range(x.shape[1])])


def test_standardize_examples():
    train, _, stats = standardize(_table([[0.0, 3.0], [10.0, 3.0]]))
    np.testing.assert_array_equal(train.features, [[-1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(stats.std, [[5.0, 0.0]])


def test_standardize_already_standard():
    col = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    train, _, _ = standardize(_table(col))
    np.testing.assert_allclose(train.features, col, atol=1e-9)


def test_standardize_uses_train_stats_for_test():
    _, test, _ = standardize(_table([[0.0], [10.0]]), _table([[5.0], [15.0]]))
    np.testing.assert_array_equal(test.features, [[0.0], [2.0]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardize_property(x):
    train, _, _ = standardize(_table(x))
    out = train.features
    assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
    spread = x.std(axis=0)
    varying = spread > 1e-6 * np.maximum(np.abs(x).max(axis=0), 1.0)
    np.testing.assert_allclose(out.std(axis=0)[varying], 1.0, atol=1e-6)


def test_split_sizes_and_cover():
    table = _table(np.arange(10.0)[:, None])
    train, test = train_test_split(table, 0.2, seed=4)
    assert train.n_rows == 8 and test.n_rows == 2
    assert sorted(np.concatenate([train.features, test.features]).ravel()) == list(range(10))


def test_split_deterministic():
    table = _table(np.arange(50.0)[:, None])
    a = train_test_split(table, 0.3, seed=1)
    b = train_test_split(table, 0.3, seed=1)
    np.testing.assert_array_equal(a[1].features, b[1].features)
    c = train_test_split(table, 0.3, seed=2)
    assert not np.array_equal(a[1].features, c[1].features)


@pytest.mark.parametrize("frac", [0.999, 0.0, 1.0, 0.01])
def test_split_degenerate(frac):
    with pytest.raises(DomainError):
        train_test_split(_table(np.arange(10.0)[:, None]), frac, seed=0)


# --- synthetic generator -------------------------------------------------


def test_synth_deterministic():
    a = synth_blockwise(100, 12, 3, 3, 0.1, seed=5)
    b = synth_blockwise(100, 12, 3, 3, 0.1, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert a.fingerprint() == b.fingerprint()


def test_synth_class_balance():
    table = synth_blockwise(10_000, 64, 4, 4, seed=0)
    freq = np.bincount(table.targets, minlength=4) / table.n_rows
    assert np.all(np.abs(freq - 0.25) <= 0.05)


def test_synth_noiseless_labels_reproducible():
    table = synth_blockwise(500, 10, 3, 3, 0.0, seed=2)
    w = table.meta["weights"]
    # independent reimplementation: contiguous groups 0-2, 3-5, 6-9
    bounds = [(0, 3), (3, 6), (6, 10)]
    scores = np.zeros((500, 3))
    for i in range(500):
        agg = [sum(table.features[i, j] for j in range(lo, hi)) / math.sqrt(hi - lo) for lo, hi in bounds]
        for k in range(3):
            scores[i, k] = sum(w[k, g] * agg[g] for g in range(3))
    np.testing.assert_array_equal(scores.argmax(axis=1), table.targets)


def test_synth_weights_orthonormal():
    w = synth_blockwise(10, 8, 4, 3, seed=1).meta["weights"]
    np.testing.assert_allclose(w @ w.T, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("args", [(0, 4, 2, 2), (10, 4, 5, 2), (10, 4, 0, 2), (10, 4, 2, 1)])
def test_synth_invalid(args):
    with pytest.raises(DomainError):
        synth_blockwise(*args)


def test_mask_group_replaces_only_that_group():
    table = synth_blockwise(200, 12, 3, 3, seed=0)
    masked = mask_group(table, 1, seed=0)
    np.testing.assert_array_equal(masked.features[:, :4], table.features[:, :4])
    np.testing.assert_array_equal(masked.features[:, 8:], table.features[:, 8:])
    assert not np.any(masked.features[:, 4:8] == table.features[:, 4:8])
    np.testing.assert_array_equal(masked.targets, table.targets)


def test_bayes_accuracy_drops_when_a_group_is_hidden():
    table = synth_blockwise(1000, 16, 4, 4, 0.0, seed=0)
    full = bayes_accuracy(table)
    assert full == 1.0
    for g in range(4):
        assert bayes_accuracy(table, hidden_groups=(g,), n_samples=128) < full - 0.05
