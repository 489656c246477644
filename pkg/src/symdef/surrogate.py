"""Per-dataset random-forest surrogates of normalized performance.

Each tree is grown by scikit-learn's CART on a bootstrap sample; the fitted
trees are then flattened into a single set of node arrays so that batches of
configurations can be scored without per-tree Python overhead.  Every tree
draws its randomness from ``(seed, tree index)``, which keeps a forest
identical no matter how many threads trained it.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import stats
from sklearn.tree import DecisionTreeRegressor

from .errors import ValidationError
from .metadata import EvaluationTable
from .space import LOG, SearchSpace

QUALITY_THRESHOLD = 0.8


@dataclass(frozen=True)
class ForestSettings:
    n_trees: int = 100
    max_features: int | None = None  # None: ceil(d / 3)
    min_samples_leaf: int = 1
    bootstrap: bool = True

    def features_for(self, d: int) -> int:
        return self.max_features if self.max_features is not None else max(1, math.ceil(d / 3))


@numba.njit(nogil=True, cache=True)
def _forest_predict(feature, threshold, left, right, value, roots, X, out):
    n_trees = roots.shape[0]
    for b in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[b, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[b] = acc / n_trees


@dataclass
class SurrogateModel:
    dataset_id: str
    algorithm: str
    names: tuple[str, ...]
    log_mask: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    score_min: float
    score_max: float
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def transform(self, V: np.ndarray) -> np.ndarray:
        """Model input space: log where the hyperparameter is log-scaled, float32 precision like CART."""
        V = np.array(V, dtype=float, copy=True)
        if self.log_mask.any():
            V[:, self.log_mask] = np.log(V[:, self.log_mask])
        return V.astype(np.float32).astype(np.float64)

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            meta=np.array(json.dumps({"dataset_id": self.dataset_id, "algorithm": self.algorithm, "names": list(self.names)})),
            log_mask=self.log_mask,
            lower=self.lower,
            upper=self.upper,
            score_range=np.array([self.score_min, self.score_max]),
            feature=self.feature,
            threshold=self.threshold,
            left=self.left,
            right=self.right,
            value=self.value,
            roots=self.roots,
        )

    @classmethod
    def load(cls, path: str | Path) -> SurrogateModel:
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            return cls(
                dataset_id=meta["dataset_id"],
                algorithm=meta["algorithm"],
                names=tuple(meta["names"]),
                log_mask=z["log_mask"],
                lower=z["lower"],
                upper=z["upper"],
                score_min=float(z["score_range"][0]),
                score_max=float(z["score_range"][1]),
                feature=z["feature"],
                threshold=z["threshold"],
                left=z["left"],
                right=z["right"],
                value=z["value"],
                roots=z["roots"],
            )


def _fit_tree(X, y, settings: ForestSettings, seed: int, index: int):
    rng = np.random.default_rng([seed, index])
    n = len(y)
    rows = rng.integers(0, n, n) if settings.bootstrap else np.arange(n)
    tree = DecisionTreeRegressor(
        max_features=settings.features_for(X.shape[1]),
        min_samples_leaf=settings.min_samples_leaf,
        random_state=int(rng.integers(2**31 - 1)),
    )
    tree.fit(X[rows], y[rows])
    t = tree.tree_
    return t.feature.copy(), t.threshold.copy(), t.children_left.copy(), t.children_right.copy(), t.value[:, 0, 0].copy()


def fit_forest(
    dataset_id: str,
    algorithm: str,
    names,
    log_scale,
    X: np.ndarray,
    y: np.ndarray,
    settings: ForestSettings = ForestSettings(),
    seed: int = 0,
    threads: int = 1,
) -> SurrogateModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValidationError(f"dataset {dataset_id!r}: need at least 2 records to train a surrogate")
    lower, upper = X.min(axis=0), X.max(axis=0)
    # log only where every observed value is positive
    log_mask = np.array([bool(s) and lo > 0 for s, lo in zip(log_scale, lower)])
    model = SurrogateModel(
        dataset_id=dataset_id,
        algorithm=algorithm,
        names=tuple(names),
        log_mask=log_mask,
        lower=lower,
        upper=upper,
        score_min=float(y.min()),
        score_max=float(y.max()),
        feature=np.empty(0, np.int32),
        threshold=np.empty(0),
        left=np.empty(0, np.int32),
        right=np.empty(0, np.int32),
        value=np.empty(0),
        roots=np.empty(0, np.int32),
    )
    Xt = model.transform(X)

    def job(i):
        return _fit_tree(Xt, y, settings, seed, i)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trees = list(pool.map(job, range(settings.n_trees)))
    else:
        trees = [job(i) for i in range(settings.n_trees)]

    feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
    offset = 0
    for feat, thr, lft, rgt, val in trees:
        leaf = lft < 0
        feats.append(np.where(leaf, -1, feat))
        thrs.append(thr)
        lefts.append(np.where(leaf, -1, lft + offset))
        rights.append(np.where(leaf, -1, rgt + offset))
        vals.append(val)
        roots.append(offset)
        offset += len(feat)
    model.feature = np.concatenate(feats).astype(np.int32)
    model.threshold = np.concatenate(thrs).astype(np.float64)
    model.left = np.concatenate(lefts).astype(np.int32)
    model.right = np.concatenate(rights).astype(np.int32)
    model.value = np.concatenate(vals).astype(np.float64)
    model.roots = np.array(roots, dtype=np.int32)
    return model


def train_surrogate(
    table: EvaluationTable,
    dataset_id: str,
    space: SearchSpace | None = None,
    settings: ForestSettings = ForestSettings(),
    seed: int = 0,
    threads: int = 1,
) -> SurrogateModel:
    """Fit the surrogate for one dataset on its normalized scores."""
    space = space or table.space
    g = table[dataset_id]
    if len(g) == 0:
        raise ValidationError(f"dataset {dataset_id!r} has no records")
    return fit_forest(
        dataset_id,
        space.algorithm,
        space.names,
        [h.scale == LOG for h in space.tunable],
        g.X,
        g.score,
        settings,
        seed,
        threads,
    )


def clamp_to_observed(v: np.ndarray, model: SurrogateModel) -> np.ndarray:
    """Truncate each component into the range observed in the dataset's metadata.

    Infinite values land on the matching bound; nan (invalid) stays nan.
    """
    return np.clip(np.asarray(v, dtype=float), model.lower, model.upper)


def predict(model: SurrogateModel, v: np.ndarray) -> np.ndarray | float:
    """Mean leaf value over the forest for one vector or a batch of rows."""
    V = np.asarray(v, dtype=float)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    if V.shape[1] != len(model.names):
        raise ValidationError(f"expected {len(model.names)} hyperparameters, got {V.shape[1]}")
    if np.isnan(V).any():
        raise ValidationError("cannot predict for an invalid (nan) hyperparameter value")
    out = np.empty(len(V))
    _forest_predict(
        model.feature, model.threshold, model.left, model.right, model.value, model.roots, model.transform(V), out
    )
    # summation rounding could step a hair outside the training targets
    np.clip(out, model.score_min, model.score_max, out=out)
    return float(out[0]) if single else out


def score_batch(model: SurrogateModel, V: np.ndarray) -> np.ndarray:
    """Clamp then predict; rows with any invalid component score 0."""
    V = clamp_to_observed(np.atleast_2d(V), model)
    bad = np.isnan(V).any(axis=1)
    out = np.zeros(len(V))
    if (~bad).any():
        out[~bad] = predict(model, V[~bad])
    return out


# --------------------------------------------------------------------------
# quality gate


@dataclass
class QualityReport:
    dataset_id: str
    spearman: float
    kendall: float
    passed: bool
    threshold: float = QUALITY_THRESHOLD
    predicted: np.ndarray | None = None
    true: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "spearman": self.spearman,
            "kendall": self.kendall,
            "passed": self.passed,
            "threshold": self.threshold,
        }


def rank_correlations(predicted, true) -> tuple[float, float]:
    """Spearman rho (average ranks for ties) and Kendall tau-b; nan when undefined."""
    predicted = np.asarray(predicted, dtype=float)
    true = np.asarray(true, dtype=float)
    if np.ptp(predicted) == 0 or np.ptp(true) == 0:
        return float("nan"), float("nan")
    rho = stats.spearmanr(predicted, true).statistic
    tau = stats.kendalltau(predicted, true, variant="b").statistic
    return float(rho), float(tau)


def quality(
    table: EvaluationTable,
    dataset_id: str,
    space: SearchSpace | None = None,
    folds: int = 10,
    seed: int = 0,
    settings: ForestSettings = ForestSettings(),
    threshold: float = QUALITY_THRESHOLD,
    threads: int = 1,
) -> QualityReport:
    """Cross-validated rank agreement between surrogate predictions and true scores."""
    space = space or table.space
    g = table[dataset_id]
    if len(g) < folds:
        raise ValidationError(f"dataset {dataset_id!r}: {len(g)} records, need at least {folds} for {folds}-fold CV")
    order = np.random.default_rng([seed, 0x51]).permutation(len(g))
    pred = np.empty(len(g))
    log_scale = [h.scale == LOG for h in space.tunable]
    for i, test in enumerate(np.array_split(order, folds)):
        train = np.setdiff1d(order, test)
        model = fit_forest(
            dataset_id, space.algorithm, space.names, log_scale, g.X[train], g.score[train], settings, seed + i + 1, threads
        )
        pred[test] = predict(model, clamp_to_observed(g.X[test], model))
    rho, tau = rank_correlations(pred, g.score)
    passed = bool(rho > threshold) if not math.isnan(rho) else False
    return QualityReport(dataset_id, rho, tau, passed, threshold, pred, g.score.copy())


# --------------------------------------------------------------------------
# on-disk store: <root>/<algorithm>/<dataset_id>.npz plus manifest.json


def _check_id(dataset_id: str) -> str:
    if not dataset_id or any(c in dataset_id for c in "/\\") or dataset_id in (".", ".."):
        raise ValidationError(f"dataset id {dataset_id!r} cannot be used as a file name")
    return dataset_id


class SurrogateStore:
    def __init__(self, root: str | Path, algorithm: str):
        self.dir = Path(root) / algorithm
        self.algorithm = algorithm

    @property
    def manifest_path(self) -> Path:
        return self.dir / "manifest.json"

    def path(self, dataset_id: str) -> Path:
        return self.dir / f"{_check_id(dataset_id)}.npz"

    def save(self, model: SurrogateModel) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        model.save(self.path(model.dataset_id))

    def load(self, dataset_id: str) -> SurrogateModel:
        path = self.path(dataset_id)
        if not path.exists():
            raise ValidationError(f"missing surrogate for {self.algorithm}/{dataset_id} ({path})")
        return SurrogateModel.load(path)

    def read_manifest(self) -> dict:
        if not self.manifest_path.exists():
            raise ValidationError(f"no surrogate manifest at {self.manifest_path}; run surrogate-train first")
        with open(self.manifest_path, encoding="utf-8") as fh:
            return json.load(fh)

    def write_manifest(self, manifest: dict) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def usable_ids(self) -> list[str]:
        manifest = self.read_manifest()
        return [d["dataset_id"] for d in manifest["datasets"] if d["usable"]]


def manifest_entry(dataset_id: str, report: QualityReport | None, flags: list[str]) -> dict:
    entry = {"dataset_id": dataset_id, "flags": flags}
    if report is not None:
        entry.update(report.to_dict())
    entry["usable"] = not flags and report is not None and report.passed
    return entry


def settings_dict(settings: ForestSettings) -> dict:
    return asdict(settings)
