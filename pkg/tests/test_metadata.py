import itertools
import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from symdef.errors import ValidationError
from symdef.metadata import (
    EvaluationTable,
    check_metafeature_coverage,
    compute_metafeatures,
    load_metafeatures,
    load_records,
    median_kernel_distance,
    normalize_losses,
    read_raw_dataset,
    save_metafeatures,
    save_records,
    split_lodo,
)
from symdef.space import builtin_space

from .conftest import make_mf

SVM = builtin_space("svm")


def write_records(path, rows, header="dataset_id,C,gamma,logloss"):
    path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def test_normalization_example(tmp_path):
    path = write_records(tmp_path / "r.csv", [("d1", 1, 1, 0.2), ("d1", 2, 2, 0.5), ("d1", 3, 3, 0.8)])
    t = load_records(path, SVM)
    np.testing.assert_allclose(t["d1"].score, [1.0, 0.5, 0.0])
    assert t["d1"].best_loss == 0.2 and t["d1"].worst_loss == 0.8


def test_degenerate_dataset(tmp_path):
    path = write_records(tmp_path / "r.csv", [("d1", i, i, 0.3) for i in range(5)])
    t = load_records(path, SVM)
    assert t["d1"].score.tolist() == [1.0] * 5
    assert "degenerate" in t.flags()["d1"]


def test_sparse_flag(tmp_path, rng):
    rows = [(d, rng.random(), rng.random(), rng.random()) for d in ("a", "b") for _ in range(150)]
    rows += [("c", 1.0, 1.0, 0.1 * i) for i in range(150)]
    t = load_records(write_records(tmp_path / "r.csv", rows), SVM)
    assert t.dataset_ids == ["a", "b", "c"]
    assert t.flags() == {"a": [], "b": [], "c": ["sparse"]}


@pytest.mark.parametrize(
    "header, rows, match",
    [
        ("dataset_id,C,logloss", [("d", 1, 0.1)], "missing column"),
        ("dataset_id,C,gamma,kernel,logloss", [("d", 1, 1, 1, 0.1)], "unknown hyperparameter"),
        ("dataset_id,C,gamma", [("d", 1, 1)], "logloss"),
        ("dataset_id,C,gamma,logloss", [("d", "x", 1, 0.1)], "non-numeric"),
        ("dataset_id,C,gamma,logloss", [("d", 1, 1, -0.1)], "non-negative"),
        ("dataset_id,C,gamma,logloss", [("d", 1, 1, "nan")], "finite"),
        ("dataset_id,C,gamma,logloss", [("d", 1, 1)], "cells"),
    ],
)
def test_load_errors(tmp_path, header, rows, match):
    with pytest.raises(ValidationError, match=match):
        load_records(write_records(tmp_path / "r.csv", rows, header), SVM)


def test_column_order_free(tmp_path):
    path = write_records(tmp_path / "r.csv", [(0.1, 2, "d", 1), (0.4, 3, "d", 5)], "logloss,gamma,dataset_id,C")
    t = load_records(path, SVM)
    np.testing.assert_array_equal(t["d"].X, [[1, 2], [5, 3]])


def test_records_round_trip_bit_identical(tmp_path, rng):
    X = rng.lognormal(size=(40, 2))
    loss = rng.random(40)
    t = EvaluationTable.from_arrays(SVM, {"x": (X, loss), "y": (X[::-1], loss)})
    save_records(t, tmp_path / "a.csv")
    back = load_records(tmp_path / "a.csv", SVM)
    for d in t.dataset_ids:
        np.testing.assert_array_equal(back[d].X, t[d].X)
        np.testing.assert_array_equal(back[d].loss, t[d].loss)
        np.testing.assert_array_equal(back[d].score, t[d].score)
    save_records(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=3, max_size=40))
def test_normalization_preserves_ranks(ticks):
    loss = np.array(ticks) / 1024.0
    score, degenerate = normalize_losses(loss)
    if degenerate:
        return
    assert score.max() == 1.0 and score.min() == 0.0
    np.testing.assert_array_equal(stats.rankdata(-loss), stats.rankdata(score))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=3, max_size=40))
def test_normalization_never_inverts_order(losses):
    # losses closer than one ulp of the range can collapse to equal scores
    loss = np.array(losses)
    score, _ = normalize_losses(loss)
    i, j = np.meshgrid(np.arange(len(loss)), np.arange(len(loss)))
    assert not np.any((loss[i] < loss[j]) & (score[i] < score[j]))
    assert np.all((loss[i] != loss[j]) | (score[i] == score[j]))


def test_split_lodo():
    t = EvaluationTable.from_arrays(SVM, {d: (np.ones((2, 2)), np.array([0.1, 0.2])) for d in ("d1", "d2", "d3")})
    assert split_lodo(t, "d2") == (["d1", "d3"], "d2")
    with pytest.raises(ValidationError):
        split_lodo(t, "zz")
    with pytest.raises(ValidationError, match="empty training set"):
        split_lodo(t.subset(["d1"]), "d1")


def test_split_lodo_cardinality():
    ids = [f"t{i}" for i in range(106)]
    t = EvaluationTable.from_arrays(SVM, {d: (np.ones((2, 2)), np.array([0.1, 0.2])) for d in ids})
    splits = [split_lodo(t, d) for d in ids]
    assert len({h for _, h in splits}) == 106
    assert all(len(train) == 105 for train, _ in splits)


def test_mkd_hand_example():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
    brute = sorted(float(np.sum((a - b) ** 2)) for a, b in itertools.combinations(X, 2))
    assert brute == [1.0, 4.0, 5.0, 10.0, 13.0, 18.0]
    assert median_kernel_distance(X) == pytest.approx(1.0 / 7.5, rel=1e-12)


def test_mkd_subsample_is_seeded(rng):
    X = rng.normal(size=(1500, 3))
    a = median_kernel_distance(X, seed=4)
    assert a == median_kernel_distance(X, seed=4)
    assert a != median_kernel_distance(X, seed=5)
    idx = np.random.default_rng(4).permutation(1500)[:1000]
    S = X[idx]
    d2 = [float(np.sum((S[i] - S[j]) ** 2)) for i in range(0, 1000, 37) for j in range(i + 1, 1000, 41)]
    assert 1 / a == pytest.approx(np.median(d2), rel=0.2)


def test_mkd_constant_data():
    assert median_kernel_distance(np.ones((5, 2))) == 0.0


def test_metafeatures_numeric_example(rng):
    frame = pd.DataFrame(rng.normal(size=(100, 4)) * [1, 5, 10, 0.1], columns=list("abcd"))
    frame["y"] = ["x", "z"] * 50
    mf = compute_metafeatures(frame, [], "y")
    assert (mf.n, mf.po, mf.p, mf.m, mf.rc, mf.mcp) == (100, 4, 4, 2, 0.0, 0.5)
    assert mf.xvar == pytest.approx(1.0)


def test_metafeatures_categorical_example():
    frame = pd.DataFrame(
        {"color": ["r", "g", "b", "r", "g", "b"], "x": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "y": [0, 1, 0, 1, 1, 1]}
    )
    mf = compute_metafeatures(frame, ["color"], "y")
    assert (mf.po, mf.p, mf.m) == (2, 4, 2)
    # categorical columns over one-hot width p
    assert mf.rc == 0.25
    assert mf.mcp == pytest.approx(4 / 6)
    assert mf.xvar == pytest.approx((1.0 + 3 * (2 / 9)) / 4)


def test_metafeatures_imputation():
    frame = pd.DataFrame({"c": ["a", None, "a", "b"], "x": [1.0, None, 3.0, 5.0], "y": [0, 1, 0, 1]})
    mf = compute_metafeatures(frame, ["c"], "y")
    assert mf.p == 3
    assert np.isfinite(mf.xvar) and np.isfinite(mf.mkd)


@pytest.mark.parametrize(
    "frame, match",
    [
        (pd.DataFrame({"x": [1.0, 2.0], "y": [0, 0]}), "single class"),
        (pd.DataFrame({"x": [], "y": []}), "empty"),
        (pd.DataFrame({"y": [0, 1]}), "no features"),
    ],
)
def test_metafeature_errors(frame, match):
    with pytest.raises(ValidationError, match=match):
        compute_metafeatures(frame, [], "y")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(2, 6), n=st.integers(4, 60))
def test_metafeatures_in_declared_ranges(seed, m, n):
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.arange(m), rng.integers(0, m, n)])
    frame = pd.DataFrame({"a": rng.normal(size=len(y)), "b": rng.choice(["u", "v"], size=len(y)), "y": y})
    mf = compute_metafeatures(frame, ["b"], "y")
    assert 1 / mf.m <= mf.mcp <= 1
    assert 0 <= mf.rc <= 1
    assert mf.mkd >= 0 and mf.xvar >= 0


def test_read_raw_dataset(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("x,color:cat,target\n1,r,a\n2,g,b\n3,r,a\n")
    frame, cat, target = read_raw_dataset(path)
    assert cat == ["color"] and target == "target"
    assert list(frame.columns) == ["x", "color", "target"]
    bad = tmp_path / "bad.csv"
    bad.write_text("x,target\nhello,a\nworld,b\n")
    with pytest.raises(ValidationError, match="not numeric"):
        read_raw_dataset(bad)


def test_metafeature_json(tmp_path):
    mfs = {"a": make_mf(), "b": make_mf(n=5)}
    save_metafeatures(mfs, tmp_path / "mf.json")
    assert load_metafeatures(tmp_path / "mf.json") == mfs
    (tmp_path / "bad.json").write_text(json.dumps({"a": {"n": 1}}))
    with pytest.raises(ValidationError):
        load_metafeatures(tmp_path / "bad.json")
    t = EvaluationTable.from_arrays(SVM, {d: (np.ones((2, 2)), np.array([0.1, 0.2])) for d in ("a", "c")})
    with pytest.raises(ValidationError, match="c"):
        check_metafeature_coverage(t, mfs)
