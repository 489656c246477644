"""Evaluation records, per-dataset normalization and dataset meta-features."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ValidationError
from .expr import METAFEATURE_NAMES, MetaFeatures
from .space import SearchSpace

LOSS_COLUMN = "logloss"
ID_COLUMN = "dataset_id"
MIN_UNIQUE_CONFIGS = 100
MKD_SUBSAMPLE = 1000


@dataclass
class DatasetGroup:
    """All evaluations of one dataset.

    ``X`` holds one hyperparameter vector per row in search-space order and
    ``score`` the normalized performance (1 = best loss observed, 0 = worst).
    """

    dataset_id: str
    X: np.ndarray
    loss: np.ndarray
    score: np.ndarray
    best_loss: float
    worst_loss: float
    degenerate: bool
    unique_configs: int

    def __len__(self) -> int:
        return len(self.loss)


def normalize_losses(loss: np.ndarray) -> tuple[np.ndarray, bool]:
    """Affine min-max rescaling of losses to scores; returns ``(score, degenerate)``."""
    best, worst = float(np.min(loss)), float(np.max(loss))
    if worst == best:
        return np.ones_like(loss, dtype=float), True
    score = (worst - loss) / (worst - best)
    return np.clip(score, 0.0, 1.0), False


def make_group(dataset_id: str, X: np.ndarray, loss: np.ndarray) -> DatasetGroup:
    X = np.asarray(X, dtype=float)
    loss = np.asarray(loss, dtype=float)
    score, degenerate = normalize_losses(loss)
    return DatasetGroup(
        dataset_id=dataset_id,
        X=X,
        loss=loss,
        score=score,
        best_loss=float(loss.min()),
        worst_loss=float(loss.max()),
        degenerate=degenerate,
        unique_configs=len(np.unique(X, axis=0)),
    )


@dataclass
class EvaluationTable:
    space: SearchSpace
    groups: dict[str, DatasetGroup] = field(default_factory=dict)
    min_unique: int = MIN_UNIQUE_CONFIGS

    @property
    def dataset_ids(self) -> list[str]:
        return list(self.groups)

    def __getitem__(self, dataset_id: str) -> DatasetGroup:
        try:
            return self.groups[dataset_id]
        except KeyError:
            raise ValidationError(f"unknown dataset id {dataset_id!r}") from None

    def __contains__(self, dataset_id: str) -> bool:
        return dataset_id in self.groups

    def sparse(self, dataset_id: str) -> bool:
        """Too few distinct configurations evaluated to trust a surrogate."""
        return self[dataset_id].unique_configs < self.min_unique

    def flags(self) -> dict[str, list[str]]:
        out = {}
        for did, g in self.groups.items():
            reasons = []
            if g.degenerate:
                reasons.append("degenerate")
            if g.unique_configs < self.min_unique:
                reasons.append("sparse")
            out[did] = reasons
        return out

    @classmethod
    def from_arrays(cls, space: SearchSpace, data: Mapping[str, tuple[np.ndarray, np.ndarray]], min_unique=MIN_UNIQUE_CONFIGS):
        groups = {did: make_group(did, X, loss) for did, (X, loss) in data.items()}
        return cls(space, groups, min_unique)

    def subset(self, dataset_ids: Iterable[str]) -> EvaluationTable:
        return EvaluationTable(self.space, {d: self[d] for d in dataset_ids}, self.min_unique)


def load_records(path: str | Path, space: SearchSpace, min_unique: int = MIN_UNIQUE_CONFIGS) -> EvaluationTable:
    """Read a ``dataset_id,<hp...>,logloss`` CSV into a normalized table."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        for required in (ID_COLUMN, LOSS_COLUMN):
            if required not in header:
                raise ValidationError(f"{path}: missing column {required!r}")
        hp_cols = [h for h in header if h not in (ID_COLUMN, LOSS_COLUMN)]
        unknown = [h for h in hp_cols if h not in space.names]
        if unknown:
            raise ValidationError(f"{path}: unknown hyperparameter column(s) {unknown} for {space.algorithm}")
        missing = [h for h in space.names if h not in hp_cols]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {missing}")
        id_idx = header.index(ID_COLUMN)
        loss_idx = header.index(LOSS_COLUMN)
        hp_idx = [header.index(h) for h in space.names]

        rows: dict[str, tuple[list, list]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            did = row[id_idx].strip()
            try:
                x = [float(row[i]) for i in hp_idx]
                loss = float(row[loss_idx])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if not all(math.isfinite(v) for v in x):
                raise ValidationError(f"{path}:{lineno}: non-finite hyperparameter value")
            if not math.isfinite(loss) or loss < 0:
                raise ValidationError(f"{path}:{lineno}: loss must be finite and non-negative")
            xs, ls = rows.setdefault(did, ([], []))
            xs.append(x)
            ls.append(loss)
    if not rows:
        raise ValidationError(f"{path}: no records")
    data = {did: (np.array(xs, dtype=float), np.array(ls, dtype=float)) for did, (xs, ls) in rows.items()}
    return EvaluationTable.from_arrays(space, data, min_unique)


def save_records(table: EvaluationTable, path: str | Path) -> None:
    """Write the table back in the records CSV format; floats use round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ID_COLUMN, *table.space.names, LOSS_COLUMN])
        for did, g in table.groups.items():
            for x, loss in zip(g.X, g.loss):
                w.writerow([did, *(repr(float(v)) for v in x), repr(float(loss))])


def split_lodo(table: EvaluationTable, heldout: str) -> tuple[list[str], str]:
    if heldout not in table:
        raise ValidationError(f"unknown dataset id {heldout!r}")
    train = [d for d in table.dataset_ids if d != heldout]
    if not train:
        raise ValidationError("leave-one-dataset-out needs at least two datasets: empty training set")
    return train, heldout


# --------------------------------------------------------------------------
# meta-features


def load_metafeatures(path: str | Path) -> dict[str, MetaFeatures]:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
        raise ValidationError(f"{path}: expected an object keyed by dataset id")
    return {str(k): MetaFeatures.from_dict(v) for k, v in raw.items()}


def save_metafeatures(table: Mapping[str, MetaFeatures], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: v.to_dict() for k, v in table.items()}, fh, indent=2)
        fh.write("\n")


def check_metafeature_coverage(table: EvaluationTable, mf: Mapping[str, MetaFeatures]) -> None:
    missing = [d for d in table.dataset_ids if d not in mf]
    if missing:
        raise ValidationError(f"no meta-features for dataset(s) {missing}")


def metafeature_arrays(mf: Mapping[str, MetaFeatures], dataset_ids: Iterable[str]) -> dict[str, np.ndarray]:
    ids = list(dataset_ids)
    return {k: np.array([getattr(mf[d], k) for d in ids], dtype=float) for k in METAFEATURE_NAMES}


def median_kernel_distance(X: np.ndarray, seed: int = 0, subsample: int = MKD_SUBSAMPLE) -> float:
    """Inverse of the median pairwise squared euclidean distance.

    At most ``subsample`` rows are used, taken from the front of a seeded
    shuffle.  Returns 0.0 when the median distance is zero.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < 2:
        raise ValidationError("need at least two rows for kernel distances")
    idx = np.random.default_rng(seed).permutation(n)[: min(n, subsample)]
    S = X[idx]
    sq = np.sum(S * S, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (S @ S.T)
    iu = np.triu_indices(len(S), k=1)
    med = float(np.median(np.maximum(d2[iu], 0.0)))
    return 0.0 if med == 0.0 else 1.0 / med


def compute_metafeatures(frame: pd.DataFrame, categorical: Iterable[str], target: str, seed: int = 0) -> MetaFeatures:
    """Meta-features of a raw dataset.

    Numeric columns are median-imputed and standardized, categorical columns
    mode-imputed and one-hot encoded, and the characteristics are read off
    the processed matrix.
    """
    if frame.empty:
        raise ValidationError("empty dataset")
    if target not in frame.columns:
        raise ValidationError(f"missing target column {target!r}")
    y = frame[target]
    X = frame.drop(columns=[target])
    categorical = [c for c in categorical if c != target]
    if X.shape[1] < 1:
        raise ValidationError("dataset has no features")
    if len(frame) < 2:
        raise ValidationError("dataset needs at least two rows")
    classes = y.dropna().value_counts()
    if len(classes) < 2:
        raise ValidationError("target has a single class")

    parts = []
    for col in X.columns:
        s = X[col]
        if col in categorical:
            mode = s.mode(dropna=True)
            s = s.fillna(mode.iloc[0] if len(mode) else "missing").astype(str)
            parts.append(pd.get_dummies(s, prefix=str(col), dtype=float))
        else:
            s = pd.to_numeric(s, errors="raise").astype(float)
            median = s.median()
            s = s.fillna(0.0 if pd.isna(median) else median)
            sd = s.std(ddof=0)
            s = s - s.mean()
            if sd > 0:
                s = s / sd
            parts.append(s.to_frame(str(col)))
    processed = pd.concat(parts, axis=1).to_numpy(dtype=float)

    n = len(frame)
    po = X.shape[1]
    p = processed.shape[1]
    return MetaFeatures(
        n=n,
        po=po,
        p=p,
        m=len(classes),
        rc=len(categorical) / p,
        mcp=float(classes.iloc[0] / classes.sum()),
        mkd=median_kernel_distance(processed, seed=seed),
        xvar=float(np.mean(processed.var(axis=0, ddof=0))),
    )


def read_raw_dataset(path: str | Path) -> tuple[pd.DataFrame, list[str], str]:
    """Read a raw CSV: last column is the target, a ``:cat`` header suffix marks categoricals."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if frame.shape[1] < 2 or len(frame) == 0:
        raise ValidationError(f"{path}: need a header, at least one row, a feature and a target column")
    renamed, categorical = {}, []
    for col in frame.columns:
        name = col.strip()
        if name.endswith(":cat"):
            name = name[: -len(":cat")]
            categorical.append(name)
        renamed[col] = name
    frame = frame.rename(columns=renamed)
    target = frame.columns[-1]
    for col in frame.columns[:-1]:
        if col not in categorical:
            try:
                frame[col] = pd.to_numeric(frame[col])
            except ValueError as exc:
                raise ValidationError(f"{path}: column {col!r} is not numeric; mark it with ':cat'") from exc
    return frame, categorical, target
