"""Hyperparameter search spaces and published package defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import UnknownAlgorithmError, ValidationError
from .expr import FLOAT, INTEGER, KINDS, SymbolicConfiguration

LINEAR = "linear"
LOG = "log"


@dataclass(frozen=True)
class HyperparameterDef:
    name: str
    kind: str
    scale: str = LINEAR

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.scale not in (LINEAR, LOG):
            raise ValidationError(f"{self.name}: scale must be linear or log, got {self.scale!r}")


@dataclass(frozen=True)
class SearchSpace:
    algorithm: str
    tunable: tuple[HyperparameterDef, ...]
    fixed: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        names = [h.name for h in self.tunable]
        if len(set(names)) != len(names):
            raise ValidationError(f"{self.algorithm}: duplicate hyperparameter names")
        if not names:
            raise ValidationError(f"{self.algorithm}: no tunable hyperparameters")
        clash = set(names) & {k for k, _ in self.fixed}
        if clash:
            raise ValidationError(f"{self.algorithm}: {sorted(clash)} both fixed and tunable")

    @property
    def names(self) -> list[str]:
        return [h.name for h in self.tunable]

    @property
    def kinds(self) -> list[str]:
        return [h.kind for h in self.tunable]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "tunable": [{"name": h.name, "kind": h.kind, "scale": h.scale} for h in self.tunable],
            "fixed": [{"name": k, "value": v} for k, v in self.fixed],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SearchSpace:
        try:
            tunable = tuple(
                HyperparameterDef(t["name"], t["kind"], t.get("scale", LINEAR)) for t in d["tunable"]
            )
            fixed = tuple((f["name"], f["value"]) for f in d.get("fixed", []))
            return cls(d["algorithm"], tunable, fixed)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed search space: {exc}") from exc


def load_space(path: str | Path) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return SearchSpace.from_dict(raw)


def _hp(name, kind, scale=LINEAR):
    return HyperparameterDef(name, kind, scale)


_BUILTIN = {
    "glmnet": SearchSpace(
        "glmnet",
        (_hp("alpha", FLOAT), _hp("lambda", FLOAT, LOG)),
    ),
    "rpart": SearchSpace(
        "rpart",
        (
            _hp("cp", FLOAT, LOG),
            _hp("max.depth", INTEGER),
            _hp("minbucket", INTEGER),
            _hp("minsplit", INTEGER),
        ),
    ),
    "ranger": SearchSpace(
        "ranger",
        (
            _hp("mtry", INTEGER),
            _hp("sample.fraction", FLOAT),
            _hp("min.node.size", INTEGER),
        ),
        (("splitrule", "gini"), ("num.trees", 500), ("replace", True)),
    ),
    "svm": SearchSpace(
        "svm",
        (_hp("C", FLOAT, LOG), _hp("gamma", FLOAT, LOG)),
        (("kernel", "radial"),),
    ),
    "knn": SearchSpace(
        "knn",
        (_hp("k", INTEGER), _hp("M", INTEGER), _hp("ef", INTEGER), _hp("efc", INTEGER)),
        (("distance", "l2"),),
    ),
    "xgboost": SearchSpace(
        "xgboost",
        (
            _hp("eta", FLOAT, LOG),
            _hp("lambda", FLOAT, LOG),
            _hp("gamma", FLOAT, LOG),
            _hp("alpha", FLOAT, LOG),
            _hp("subsample", FLOAT),
            _hp("max_depth", INTEGER),
            _hp("min_child_weight", FLOAT),
            _hp("colsample_bytree", FLOAT),
            _hp("colsample_bylevel", FLOAT),
        ),
        (("booster", "gbtree"), ("nrounds", 500)),
    ),
}

ALGORITHMS = tuple(_BUILTIN)


def builtin_space(algorithm: str) -> SearchSpace:
    try:
        return _BUILTIN[algorithm]
    except KeyError:
        raise UnknownAlgorithmError(
            f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}"
        ) from None


# Package defaults as formulas, keyed by (algorithm, package).
_DEFAULTS = {
    ("glmnet", "glmnet"): ["1", "0.01"],
    ("rpart", "rpart"): ["0.01", "30", "1", "20"],
    ("ranger", "ranger"): ["pow(po, 0.5)", "1", "1"],
    ("svm", "e1071"): ["1", "truediv(1, po)"],
    ("svm", "sklearn"): ["1", "truediv(1, mul(p, xvar))"],
    ("knn", "mlr"): ["10", "16", "10", "200"],
    ("xgboost", "xgboost"): ["0.1", "1", "0", "0", "1", "3", "1", "1", "1"],
}


def default_sources(algorithm: str) -> list[str]:
    builtin_space(algorithm)
    return [src for alg, src in _DEFAULTS if alg == algorithm]


def implementation_default(algorithm: str, source: str) -> SymbolicConfiguration:
    """The default a software package ships, symbolic where the package's is."""
    try:
        formulas = _DEFAULTS[(algorithm, source)]
    except KeyError:
        known = ", ".join(f"{a}/{s}" for a, s in _DEFAULTS)
        raise UnknownAlgorithmError(f"no implementation default for {algorithm}/{source}; known: {known}") from None
    return SymbolicConfiguration.from_formulas(builtin_space(algorithm), formulas)
