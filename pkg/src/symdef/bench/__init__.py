"""Leave-one-dataset-out benchmarking, baselines and rank statistics."""

from .lodo import (
    BenchmarkResult,
    ExternalEvaluator,
    LodoParams,
    default_methods,
    knn1_default,
    knn1_neighbor,
    optimistic_random_search,
    run_lodo,
    score_configuration,
)
from .report import render, report, summarize
from .stats import friedman_test, nemenyi_cd, not_worse_than_best, rank_scores

__all__ = [
    "BenchmarkResult",
    "ExternalEvaluator",
    "LodoParams",
    "default_methods",
    "friedman_test",
    "knn1_default",
    "knn1_neighbor",
    "nemenyi_cd",
    "not_worse_than_best",
    "optimistic_random_search",
    "rank_scores",
    "render",
    "report",
    "run_lodo",
    "score_configuration",
    "summarize",
]
