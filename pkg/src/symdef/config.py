"""Run configuration: a JSON file whose fields command-line flags can override.

Precedence, highest first: explicit flag, config file, ``SYMDEF_THREADS``
(threads only), built-in default.  Relative paths are taken relative to the
working directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .bench.lodo import DEFAULT_BUDGETS
from .errors import ValidationError
from .evolve import EvolutionParams
from .surrogate import QUALITY_THRESHOLD, ForestSettings

THREADS_ENV = "SYMDEF_THREADS"


@dataclass
class RunConfig:
    algorithm: str = "svm"
    space: str | None = None  # JSON search space; overrides the built-in one
    records: str | None = None
    metafeatures: str | None = None
    surrogate_dir: str = "surrogates"
    out: str = "out"
    evolution: EvolutionParams = field(default_factory=EvolutionParams)
    forest: ForestSettings = field(default_factory=ForestSettings)
    rs_budgets: tuple[int, ...] = DEFAULT_BUDGETS
    rs_reps: int = 30
    knn: bool = True
    defaults: tuple[str, ...] | None = None  # package defaults to compare; None means all known
    quality_threshold: float = QUALITY_THRESHOLD
    quality_folds: int = 10
    min_unique: int = 100
    replications: int = 10
    seed: int = 0
    threads: int = 1
    external_evaluator: str | None = None

    def __post_init__(self):
        if not 0.0 < self.quality_threshold <= 1.0:
            raise ValidationError("quality_threshold must be in (0, 1]")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if any(b < 1 for b in self.rs_budgets):
            raise ValidationError("random-search budgets must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _nested(cls, raw, name):
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ValidationError(f"config field {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown {name} field(s): {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {name} settings: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown config field(s): {unknown}")
    raw = dict(raw)
    if "evolution" in raw:
        raw["evolution"] = _nested(EvolutionParams, raw["evolution"], "evolution")
    if "forest" in raw:
        raw["forest"] = _nested(ForestSettings, raw["forest"], "forest")
    for key in ("rs_budgets", "defaults"):
        if raw.get(key) is not None:
            raw[key] = tuple(raw[key])
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ValidationError(f"invalid config: {exc}") from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"config file {path} must hold a JSON object")
    if "threads" not in raw and os.environ.get(THREADS_ENV):
        try:
            raw["threads"] = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer") from None
    cfg = config_from_dict(raw)
    return apply_overrides(cfg, overrides or {})


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Flag values win over the file; ``None`` means the flag was not given."""
    top, evo = {}, {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("constant_only", "generations", "mu", "lam", "patience"):
            evo[key] = value
        else:
            top[key] = value
    try:
        if evo:
            top["evolution"] = replace(cfg.evolution, **evo)
        return replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
