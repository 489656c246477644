"""Synthetic metadata with a planted symbolic optimum.

Every dataset gets random meta-features inside the ranges seen on real
benchmark suites, and an SVM-like response surface whose best ``gamma`` is
exactly ``mkd / xvar`` and whose best ``C`` is 1.  A search that can use
meta-features should recover that ratio; a constant-only search cannot.
"""

from __future__ import annotations

import numpy as np

from .expr import MetaFeatures
from .metadata import EvaluationTable
from .space import builtin_space

C_RANGE = (2.0**-10, 2.0**10)
GAMMA_RANGE = (2.0**-15, 2.0**5)


def _loguniform(rng, lo, hi, size=None):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size))


def random_metafeatures(rng: np.random.Generator) -> MetaFeatures:
    n = int(round(_loguniform(rng, 100, 130064)))
    po = int(round(_loguniform(rng, 4, 10000)))
    p = int(min(71673, round(po * _loguniform(rng, 1.0, 8.0))))
    m = int(round(_loguniform(rng, 2, 100)))
    return MetaFeatures(
        n=n,
        po=po,
        p=p,
        m=m,
        rc=float(rng.uniform(0.0, 1.0)),
        mcp=float(rng.uniform(1.0 / m, 1.0)),
        mkd=float(_loguniform(rng, 2.0**-12, 0.55)),
        xvar=float(rng.uniform(0.1, 1.0)),
    )


def planted_score(C, gamma, mf: MetaFeatures):
    """Ground-truth performance in (0, 1]; peaks at C = 1, gamma = mkd / xvar."""
    C = np.asarray(C, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    target = np.log(mf.mkd / mf.xvar)
    return np.exp(-((np.log(gamma) - target) ** 2) / 8.0) * np.exp(-(np.log(C) ** 2) / 32.0)


def planted_problem(
    n_datasets: int = 20, n_configs: int = 500, seed: int = 0
) -> tuple[EvaluationTable, dict[str, MetaFeatures]]:
    """Random meta-features and ``n_configs`` log-uniform SVM evaluations per dataset."""
    rng = np.random.default_rng(seed)
    space = builtin_space("svm")
    data, mf = {}, {}
    for k in range(n_datasets):
        did = f"syn{k:02d}"
        mf[did] = random_metafeatures(rng)
        C = _loguniform(rng, *C_RANGE, n_configs)
        gamma = _loguniform(rng, *GAMMA_RANGE, n_configs)
        loss = 1.0 - planted_score(C, gamma, mf[did])
        data[did] = (np.column_stack([C, gamma]), loss)
    return EvaluationTable.from_arrays(space, data), mf


def monotone_problem(n_configs: int = 500, seed: int = 0) -> EvaluationTable:
    """One dataset whose score depends on gamma alone: ``1 - |log2(gamma) + 5| / 20``."""
    rng = np.random.default_rng(seed)
    C = _loguniform(rng, *C_RANGE, n_configs)
    gamma = _loguniform(rng, *GAMMA_RANGE, n_configs)
    score = 1.0 - np.abs(np.log2(gamma) + 5.0) / 20.0
    return EvaluationTable.from_arrays(builtin_space("svm"), {"mono": (np.column_stack([C, gamma]), 1.0 - score)})
