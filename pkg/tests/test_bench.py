import itertools
import json
import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from symdef.bench import (
    BenchmarkResult,
    ExternalEvaluator,
    LodoParams,
    default_methods,
    friedman_test,
    knn1_default,
    knn1_neighbor,
    nemenyi_cd,
    not_worse_than_best,
    optimistic_random_search,
    render,
    report,
    run_lodo,
    score_configuration,
    summarize,
)
from symdef.bench.lodo import stream_seed
from symdef.bench.stats import nemenyi_q
from symdef.errors import SymdefError, ValidationError
from symdef.evolve import EvolutionParams
from symdef.expr import METAFEATURE_NAMES, realize_configuration
from symdef.metadata import EvaluationTable
from symdef.space import builtin_space, implementation_default
from symdef.surrogate import ForestSettings, fit_forest, predict

from .conftest import make_mf

SVM = builtin_space("svm")


def table_of(scores_by_id, X=None):
    data = {}
    for d, scores in scores_by_id.items():
        s = np.asarray(scores, dtype=float)
        x = X if X is not None else np.column_stack([np.arange(1, len(s) + 1), np.arange(1, len(s) + 1)])
        data[d] = (np.asarray(x, dtype=float), 1.0 - s)
    return EvaluationTable.from_arrays(SVM, data, min_unique=1)


# ---------------------------------------------------------------- random search


def test_rs_full_budget(rng):
    t = table_of({"d": rng.random(12)})
    assert np.all(optimistic_random_search(t, "d", 12, 50, rng) == 1.0)


def test_rs_pair_enumeration():
    exact = np.mean([max(p) for p in itertools.combinations([0.0, 0.5, 1.0], 2)])
    assert exact == pytest.approx(5 / 6)
    t = table_of({"d": [0.0, 0.5, 1.0]})
    draws = optimistic_random_search(t, "d", 2, 30_000, np.random.default_rng(0))
    assert abs(draws.mean() - 5 / 6) < 0.005


def test_rs_budget_one_is_mean(rng):
    scores = rng.random(30)
    t = table_of({"d": scores})
    est = optimistic_random_search(t, "d", 1, 10_000, rng).mean()
    assert abs(est - t["d"].score.mean()) < 0.01


def test_rs_mean_grows_with_budget(rng):
    t = table_of({"d": rng.random(64)})
    means = [optimistic_random_search(t, "d", b, 10_000, rng).mean() for b in (1, 2, 4, 8, 16, 32)]
    assert all(b >= a - 0.01 for a, b in zip(means, means[1:]))


def test_rs_errors(rng):
    t = table_of({"d": [0.0, 1.0]})
    with pytest.raises(ValidationError):
        optimistic_random_search(t, "d", 3, 1, rng)
    with pytest.raises(ValidationError):
        optimistic_random_search(t, "d", 0, 1, rng)


# ---------------------------------------------------------------- 1-NN


def l1_oracle(mfs, heldout, train):
    ids = list(train) + [heldout]
    cols = {k: [getattr(mfs[d], k) for d in ids] for k in METAFEATURE_NAMES}
    dist = {}
    for d in train:
        total = 0.0
        for k, col in cols.items():
            lo, hi = min(col), max(col)
            if hi > lo:
                total += abs((getattr(mfs[d], k) - lo) / (hi - lo) - (getattr(mfs[heldout], k) - lo) / (hi - lo))
        dist[d] = total
    return dist


def test_knn_identical_metafeatures():
    mfs = {"a": make_mf(n=10), "b": make_mf(n=500), "h": make_mf(n=500)}
    assert knn1_neighbor(mfs, "h", ["a", "b"]) == "b"


def test_knn_hand_distances():
    mfs = {
        "a": make_mf(n=100, p=10, mkd=0.1),
        "b": make_mf(n=300, p=40, mkd=0.2),
        "c": make_mf(n=900, p=20, mkd=0.3),
        "h": make_mf(n=500, p=30, mkd=0.25),
    }
    dist = l1_oracle(mfs, "h", ["a", "b", "c"])
    # n span 800, p span 30, mkd span 0.2; other columns constant
    assert dist["a"] == pytest.approx(400 / 800 + 20 / 30 + 0.15 / 0.2)
    assert dist["b"] == pytest.approx(200 / 800 + 10 / 30 + 0.05 / 0.2)
    assert dist["c"] == pytest.approx(400 / 800 + 10 / 30 + 0.05 / 0.2)
    assert knn1_neighbor(mfs, "h", ["a", "b", "c"]) == min(dist, key=dist.get) == "b"


def test_knn_tie_goes_to_smallest_id():
    mfs = {"z": make_mf(n=100), "y": make_mf(n=300), "h": make_mf(n=200)}
    assert knn1_neighbor(mfs, "h", ["z", "y"]) == "y"


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), factor=st.floats(0.01, 100))
def test_knn_scale_invariance(seed, factor):
    rng = np.random.default_rng(seed)
    ids = ["a", "b", "c", "d", "h"]
    raw = {d: dict(n=float(rng.integers(10, 10**4)), po=5, p=float(rng.integers(5, 50)), m=2, rc=0.2, mcp=0.7,
                   mkd=float(rng.random()), xvar=float(rng.random())) for d in ids}
    mfs = {d: make_mf(**v) for d, v in raw.items()}
    scaled = {d: make_mf(**{**v, "n": v["n"] * factor, "xvar": v["xvar"] * factor}) for d, v in raw.items()}
    assert knn1_neighbor(mfs, "h", ids[:-1]) == knn1_neighbor(scaled, "h", ids[:-1])


def test_knn_default_best_row():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    t = EvaluationTable.from_arrays(
        SVM, {"a": (X, np.array([0.5, 0.1, 0.1, 0.9])), "h": (X, np.array([0.1, 0.2, 0.3, 0.4]))}, min_unique=1
    )
    mfs = {"a": make_mf(), "h": make_mf()}
    assert knn1_default(mfs, "h", t).tolist() == [2.0, 2.0]
    with pytest.raises(ValidationError):
        knn1_neighbor(mfs, "h", [])


# ---------------------------------------------------------------- statistics


def test_friedman_ties():
    S = np.ones((3, 5))
    r = friedman_test(S)
    assert r.statistic == 0.0
    np.testing.assert_array_equal(r.mean_ranks, [2.0, 2.0, 2.0])


def test_friedman_strict_dominance():
    S = np.vstack([np.full(10, 0.9), np.full(10, 0.1)])
    r = friedman_test(S)
    np.testing.assert_array_equal(r.mean_ranks, [1.0, 2.0])
    assert abs(r.statistic - 10.0) < 1e-9


def test_friedman_against_independent_formula(rng):
    S = rng.random((4, 20))
    ranks = np.empty_like(S)
    for j in range(20):
        order = np.argsort(-S[:, j])
        ranks[order, j] = np.arange(1, 5)
    R = ranks.sum(axis=1)
    k, n = S.shape
    textbook = 12.0 / (n * k * (k + 1)) * np.sum(R**2) - 3 * n * (k + 1)
    assert abs(friedman_test(S).statistic - textbook) < 1e-9
    assert abs(friedman_test(S).statistic - stats.friedmanchisquare(*S).statistic) < 1e-9


def test_friedman_monotone_invariance(rng):
    S = rng.random((5, 12))
    assert friedman_test(S).statistic == pytest.approx(friedman_test(np.exp(4 * S) - 2).statistic, abs=1e-12)


def test_friedman_shape_errors():
    with pytest.raises(ValidationError):
        friedman_test(np.ones((1, 5)))
    with pytest.raises(ValidationError):
        friedman_test(np.ones((3, 1)))


def test_nemenyi_examples():
    assert abs(nemenyi_cd(2, 6, 0.05) - 1.960 * math.sqrt(1 / 6)) < 1e-6
    for k in range(2, 11):
        assert nemenyi_cd(k, 40) == pytest.approx(nemenyi_cd(k, 10) / 2)
    cds = [nemenyi_cd(k, 10) for k in range(2, 21)]
    assert all(b > a for a, b in zip(cds, cds[1:]))


@pytest.mark.parametrize("alpha", [0.05, 0.1])
def test_nemenyi_q_matches_studentized_range(alpha):
    for k in range(2, 21):
        oracle = stats.studentized_range.ppf(1 - alpha, k, np.inf) / math.sqrt(2)
        assert nemenyi_q(k, alpha) == pytest.approx(oracle, abs=2e-3)


def test_nemenyi_errors():
    with pytest.raises(ValidationError):
        nemenyi_cd(1, 10)
    with pytest.raises(ValidationError):
        nemenyi_cd(21, 10)
    with pytest.raises(ValidationError):
        nemenyi_cd(3, 10, alpha=0.01)


def test_not_worse_than_best():
    assert not_worse_than_best([1.0, 1.5, 3.0], 0.6).tolist() == [True, True, False]


# ---------------------------------------------------------------- report


def two_by_three():
    return BenchmarkResult(
        "svm",
        ["a", "b"],
        ["d1", "d2", "d3"],
        {"a": {"d1": [0.9], "d2": [0.6, 0.8], "d3": [0.5]}, "b": {"d1": [0.3], "d2": [0.2], "d3": [0.8]}},
    )


def test_report_hand_checkable(tmp_path):
    paths = report(two_by_three(), tmp_path)
    assert sorted(p.name for p in paths) == ["cd.json", "pairwise.csv", "summary.csv", "summary.md"]
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert rows[0] == "method,mean,sd,mean_rank,not_worse_than_best"
    assert len(rows) == 3
    a, b = (r.split(",") for r in rows[1:])
    assert float(a[1]) == pytest.approx((0.9 + 0.7 + 0.5) / 3)
    assert float(b[1]) == pytest.approx((0.3 + 0.2 + 0.8) / 3)
    assert float(a[3]) == pytest.approx(4 / 3) and float(b[3]) == pytest.approx(5 / 3)
    assert float(a[2]) == pytest.approx(np.std([0.9, 0.7, 0.5], ddof=1))
    cd = json.loads((tmp_path / "cd.json").read_text())
    assert cd["cd"] == pytest.approx(1.960 * math.sqrt(2 * 3 / 18))
    pair = (tmp_path / "pairwise.csv").read_text().splitlines()
    assert pair[0] == "dataset_id,a,b" and pair[2].startswith("d2,0.7")


def test_report_empty_methods(tmp_path):
    empty = BenchmarkResult("svm", [], ["d1"], {})
    with pytest.raises(ValidationError):
        report(empty, tmp_path / "out")
    assert not (tmp_path / "out").exists()


def test_report_byte_identical(tmp_path):
    report(two_by_three(), tmp_path / "a")
    report(BenchmarkResult.from_dict(json.loads(json.dumps(two_by_three().to_dict()))), tmp_path / "b")
    for name in ("summary.csv", "pairwise.csv", "cd.json", "summary.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(SymdefError):
        report(two_by_three(), blocker / "sub")


def test_summary_without_cd_for_many_methods():
    methods = [f"m{i}" for i in range(25)]
    res = BenchmarkResult("svm", methods, ["d1", "d2"], {m: {"d1": [i / 25], "d2": [1 - i / 25]} for i, m in enumerate(methods)})
    s = summarize(res)
    assert s["cd"] is None and s["friedman_statistic"] is not None
    assert "Nemenyi" not in render(res)["summary.md"]


def test_result_round_trip(tmp_path):
    res = two_by_three()
    res.save(tmp_path / "r.json")
    assert BenchmarkResult.load(tmp_path / "r.json") == res
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ValidationError):
        BenchmarkResult.load(tmp_path / "bad.json")


# ---------------------------------------------------------------- harness


def test_stream_seed_stable():
    assert stream_seed(0, "a", "symbolic", 1) == stream_seed(0, "a", "symbolic", 1)
    assert stream_seed(0, "a") != stream_seed(0, "b")
    assert 0 <= stream_seed(2**40, "x") < 2**63


def test_default_methods():
    assert default_methods(SVM, (1, 8)) == ["symbolic", "constant", "default:e1071", "default:sklearn", "knn1", "rs1", "rs8"]
    assert "knn1" not in default_methods(SVM, (1,), knn=False)


def test_package_default_scoring_composes(planted_small):
    _, mfs, surr = planted_small
    d = next(iter(surr))
    cfg = implementation_default("svm", "sklearn")
    values, _ = realize_configuration(cfg, mfs[d], SVM)
    model = surr[d]
    direct = predict(model, np.clip(values, model.lower, model.upper))
    assert score_configuration(cfg, SVM, mfs[d], model) == direct


FAST = LodoParams(evolution=EvolutionParams(generations=3, mu=6, lam=12), replications=2, rs_budgets=(1, 4), rs_reps=5)


def test_run_lodo_shape_and_determinism(planted_small):
    table, mfs, surr = planted_small
    methods = default_methods(SVM, FAST.rs_budgets)
    a = run_lodo(methods, SVM, table, mfs, surr, FAST)
    assert a.datasets == list(surr)
    assert len(a.scores["symbolic"][a.datasets[0]]) == 2
    assert len(a.scores["rs4"][a.datasets[0]]) == 5
    assert len(a.scores["default:e1071"][a.datasets[0]]) == 1
    S = a.matrix()
    assert S.shape == (len(methods), len(surr)) and S.min() >= 0 and S.max() <= 1
    from dataclasses import replace

    b = run_lodo(methods, SVM, table, mfs, surr, replace(FAST, threads=3))
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_run_lodo_heldout_isolation(planted_small):
    table, mfs, surr = planted_small
    heldout = list(surr)[2]
    clean = run_lodo(["symbolic", "constant", "knn1"], SVM, table, mfs, surr, FAST, datasets=[heldout])

    X = np.array([[1.0, 1.0], [2.0, 2.0]])
    poisoned_surr = dict(surr)
    poisoned_surr[heldout] = fit_forest(heldout, "svm", ["C", "gamma"], [True, True], X, np.array([0.0, 1.0]), ForestSettings(n_trees=1))
    poisoned_mf = dict(mfs)
    poisoned_mf[heldout] = make_mf(n=1, po=1, p=1, m=99, rc=1.0, mcp=1.0, mkd=1e-6, xvar=1e6)
    dirty = run_lodo(["symbolic", "constant", "knn1"], SVM, table, poisoned_mf, poisoned_surr, FAST, datasets=[heldout])
    assert dirty.configs["symbolic"] == clean.configs["symbolic"]
    assert dirty.configs["constant"] == clean.configs["constant"]


def test_run_lodo_errors(planted_small):
    table, mfs, surr = planted_small
    with pytest.raises(ValidationError):
        run_lodo([], SVM, table, mfs, surr, FAST)
    with pytest.raises(ValidationError):
        run_lodo(["rs1"], SVM, table, mfs, surr, FAST, datasets=["missing"])
    with pytest.raises(ValidationError):
        run_lodo(["bogus"], SVM, table, mfs, surr, FAST)


def test_external_evaluator(planted_small, tmp_path):
    table, mfs, surr = planted_small
    script = tmp_path / "ev.py"
    script.write_text(
        "import json, sys\n"
        "p = json.load(sys.stdin)\n"
        "print(json.dumps({'loss': p['hyperparameters']['C'] / 1000.0}))\n"
    )
    ev = ExternalEvaluator([sys.executable, str(script)])
    assert ev("svm", "x", {"C": 2.0, "gamma": 1.0}) == 0.002
    d = list(surr)[0]
    res = run_lodo(["default:e1071"], SVM, table, mfs, surr, FAST, evaluator=ev, datasets=[d])
    assert res.external["default:e1071"][d] == [0.001]
    failing = ExternalEvaluator([sys.executable, "-c", "import sys; sys.exit(3)"])
    with pytest.raises(SymdefError):
        failing("svm", "x", {})
    silent = ExternalEvaluator([sys.executable, "-c", "print('hello')"])
    with pytest.raises(SymdefError):
        silent("svm", "x", {})
