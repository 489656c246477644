"""Friedman rank test and Nemenyi critical differences."""

from __future__ import annotations

import json
import math
from functools import lru_cache
from importlib import resources
from typing import NamedTuple

import numpy as np
from scipy import stats

from ..errors import ValidationError


class FriedmanResult(NamedTuple):
    statistic: float
    mean_ranks: np.ndarray
    p_value: float


def rank_scores(scores) -> np.ndarray:
    """Per-dataset ranks of a methods x datasets matrix; rank 1 is the highest score, ties averaged."""
    S = np.asarray(scores, dtype=float)
    return np.apply_along_axis(lambda col: stats.rankdata(-col, method="average"), 0, S)


def friedman_test(scores) -> FriedmanResult:
    """Friedman chi-square over a (k methods) x (N datasets) score matrix."""
    S = np.asarray(scores, dtype=float)
    if S.ndim != 2 or S.shape[0] < 2 or S.shape[1] < 2:
        raise ValidationError(f"Friedman test needs >= 2 methods and >= 2 datasets, got shape {S.shape}")
    if not np.isfinite(S).all():
        raise ValidationError("Friedman test needs finite scores")
    k, n = S.shape
    mean_ranks = rank_scores(S).mean(axis=1)
    chi2 = 12.0 * n / (k * (k + 1)) * (np.sum(mean_ranks**2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(float(chi2), 0.0)
    return FriedmanResult(chi2, mean_ranks, float(stats.chi2.sf(chi2, k - 1)))


@lru_cache(maxsize=None)
def _q_table() -> dict:
    text = resources.files("symdef.bench").joinpath("nemenyi_q.json").read_text(encoding="utf-8")
    return json.loads(text)


def nemenyi_q(k: int, alpha: float = 0.05) -> float:
    table = _q_table()
    key = {0.05: "0.05", 0.1: "0.1", 0.10: "0.1"}.get(alpha)
    if key is None:
        raise ValidationError(f"alpha must be 0.05 or 0.10, got {alpha}")
    values = table["q"][key]
    k_min = table["k_min"]
    if not k_min <= k < k_min + len(values):
        raise ValidationError(f"Nemenyi table covers {k_min} to {k_min + len(values) - 1} methods, got {k}")
    return values[k - k_min]


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    """Minimum mean-rank gap that is significant at ``alpha``."""
    if n < 1:
        raise ValidationError("need at least one dataset")
    return nemenyi_q(k, alpha) * math.sqrt(k * (k + 1) / (6.0 * n))


def not_worse_than_best(mean_ranks, cd: float) -> np.ndarray:
    """True where a method's mean rank is within ``cd`` of the best (lowest) one."""
    r = np.asarray(mean_ranks, dtype=float)
    return r - r.min() <= cd
