"""Leave-one-dataset-out benchmark of learned defaults against baselines."""

from __future__ import annotations

import json
import shlex
import subprocess
import zlib
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import SymdefError, ValidationError
from ..evolve import EvolutionParams, evolve
from ..expr import METAFEATURE_NAMES, MetaFeatures, SymbolicConfiguration, realize_configuration
from ..metadata import EvaluationTable
from ..space import SearchSpace, default_sources, implementation_default
from ..surrogate import SurrogateModel, score_batch
from .stats import rank_scores

SYMBOLIC = "symbolic"
CONSTANT = "constant"
KNN1 = "knn1"
DEFAULT_PREFIX = "default:"
RS_PREFIX = "rs"
DEFAULT_BUDGETS = (1, 2, 4, 8, 16, 32)


def stream_seed(*parts: int | str) -> int:
    """Stable 63-bit seed from a mix of ints and strings (dataset ids)."""
    words = [zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# baselines


def optimistic_random_search(
    table: EvaluationTable, dataset_id: str, budget: int, reps: int, rng: np.random.Generator
) -> np.ndarray:
    """Best normalized score among ``budget`` distinct metadata rows, repeated ``reps`` times."""
    g = table[dataset_id]
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if budget > len(g):
        raise ValidationError(f"budget {budget} exceeds the {len(g)} rows of dataset {dataset_id!r}")
    return np.array([g.score[rng.choice(len(g), size=budget, replace=False)].max() for _ in range(reps)])


def knn1_neighbor(metafeatures: Mapping[str, MetaFeatures], heldout: str, train_ids: Sequence[str]) -> str:
    """Nearest training dataset under L1 on min-max scaled meta-features; ties go to the smallest id."""
    if not train_ids:
        raise ValidationError("1-NN needs at least one training dataset")
    ids = list(train_ids) + [heldout]
    M = np.array([[getattr(metafeatures[d], k) for k in METAFEATURE_NAMES] for d in ids], dtype=float)
    lo, hi = M.min(axis=0), M.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Z = np.where(hi > lo, (M - lo) / span, 0.0)
    dist = np.abs(Z[:-1] - Z[-1]).sum(axis=1)
    best = min(range(len(train_ids)), key=lambda i: (dist[i], train_ids[i]))
    return train_ids[best]


def knn1_default(
    metafeatures: Mapping[str, MetaFeatures],
    heldout: str,
    table: EvaluationTable,
    train_ids: Sequence[str] | None = None,
) -> np.ndarray:
    """Best-scoring configuration of the nearest training dataset (ties: lowest row)."""
    if train_ids is None:
        train_ids = [d for d in table.dataset_ids if d != heldout]
    g = table[knn1_neighbor(metafeatures, heldout, train_ids)]
    return g.X[int(np.argmax(g.score))].copy()


class ExternalEvaluator:
    """Runs a user command per configuration: JSON on stdin, a loss on stdout.

    The payload is ``{"algorithm", "dataset_id", "hyperparameters": {name: value}}``;
    the command prints either a bare number or ``{"loss": number}``.
    """

    def __init__(self, command: str | Sequence[str], timeout: float | None = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, algorithm: str, dataset_id: str, hyperparameters: Mapping[str, float]) -> float:
        payload = json.dumps(
            {"algorithm": algorithm, "dataset_id": dataset_id, "hyperparameters": dict(hyperparameters)}
        )
        proc = subprocess.run(
            self.argv, input=payload, capture_output=True, text=True, timeout=self.timeout, check=False
        )
        if proc.returncode != 0:
            raise SymdefError(f"external evaluator failed ({proc.returncode}): {proc.stderr.strip()}")
        try:
            out = json.loads(proc.stdout)
            return float(out["loss"] if isinstance(out, dict) else out)
        except (ValueError, KeyError, TypeError) as exc:
            raise SymdefError(f"external evaluator printed no loss: {proc.stdout.strip()[:200]!r}") from exc


# --------------------------------------------------------------------------
# harness


@dataclass
class LodoParams:
    evolution: EvolutionParams = field(default_factory=EvolutionParams)
    replications: int = 10
    rs_budgets: tuple[int, ...] = DEFAULT_BUDGETS
    rs_reps: int = 30
    seed: int = 0
    threads: int = 1


def default_methods(space: SearchSpace, budgets: Sequence[int] = DEFAULT_BUDGETS, knn: bool = True) -> list[str]:
    methods = [SYMBOLIC, CONSTANT]
    try:
        methods += [DEFAULT_PREFIX + s for s in default_sources(space.algorithm)]
    except ValidationError:
        pass
    if knn:
        methods.append(KNN1)
    methods += [f"{RS_PREFIX}{b}" for b in budgets]
    return methods


@dataclass
class BenchmarkResult:
    """Held-out scores per method and dataset; lists hold one entry per replication."""

    algorithm: str
    methods: list[str]
    datasets: list[str]
    scores: dict[str, dict[str, list[float]]]
    configs: dict[str, dict[str, list[list[str]]]] = field(default_factory=dict)
    external: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def matrix(self) -> np.ndarray:
        """Methods x datasets matrix of replication-averaged scores."""
        return np.array([[float(np.mean(self.scores[m][d])) for d in self.datasets] for m in self.methods])

    def mean_ranks(self) -> np.ndarray:
        return rank_scores(self.matrix()).mean(axis=1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkResult:
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> BenchmarkResult:
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValidationError(f"{path}: not a benchmark result ({exc})") from None


def score_configuration(
    config: SymbolicConfiguration, space: SearchSpace, mf: MetaFeatures, model: SurrogateModel
) -> float:
    """Realize on the dataset, clamp to the observed range and predict (nan components score 0)."""
    values, _ = realize_configuration(config, mf, space)
    return float(score_batch(model, values[None, :])[0])


def _fold(
    heldout: str,
    methods: Sequence[str],
    space: SearchSpace,
    table: EvaluationTable,
    metafeatures: Mapping[str, MetaFeatures],
    surrogates: Mapping[str, SurrogateModel],
    params: LodoParams,
    evaluator: Callable | None,
):
    train_ids = [d for d in surrogates if d != heldout]
    if not train_ids:
        raise ValidationError("leave-one-dataset-out needs at least two datasets")
    train_surr = [surrogates[d] for d in train_ids]
    train_mf = {d: metafeatures[d] for d in train_ids}
    model = surrogates[heldout]
    mf = metafeatures[heldout]
    scores, configs, external = {}, {}, {}

    def record_external(method, values_list):
        if evaluator is None:
            return
        external[method] = [
            evaluator(space.algorithm, heldout, dict(zip(space.names, map(float, v)))) for v in values_list
        ]

    for method in methods:
        if method in (SYMBOLIC, CONSTANT):
            found = []
            for rep in range(params.replications):
                ep = replace(
                    params.evolution,
                    constant_only=(method == CONSTANT),
                    seed=stream_seed(params.seed, heldout, method, rep),
                )
                found.append(evolve(ep, space, train_surr, train_mf).default.config)
            scores[method] = [score_configuration(c, space, mf, model) for c in found]
            configs[method] = [c.formulas() for c in found]
            record_external(method, [realize_configuration(c, mf, space)[0] for c in found])
        elif method.startswith(DEFAULT_PREFIX):
            c = implementation_default(space.algorithm, method[len(DEFAULT_PREFIX):])
            scores[method] = [score_configuration(c, space, mf, model)]
            configs[method] = [c.formulas()]
            record_external(method, [realize_configuration(c, mf, space)[0]])
        elif method == KNN1:
            v = knn1_default(metafeatures, heldout, table, train_ids)
            scores[method] = [float(score_batch(model, v[None, :])[0])]
            configs[method] = [[repr(float(x)) for x in v]]
            record_external(method, [v])
        elif method.startswith(RS_PREFIX) and method[len(RS_PREFIX):].isdigit():
            budget = int(method[len(RS_PREFIX):])
            rng = np.random.default_rng(stream_seed(params.seed, heldout, method))
            scores[method] = [float(s) for s in optimistic_random_search(table, heldout, budget, params.rs_reps, rng)]
        else:
            raise ValidationError(f"unknown method {method!r}")
    return scores, configs, external


def run_lodo(
    methods: Sequence[str],
    space: SearchSpace,
    table: EvaluationTable,
    metafeatures: Mapping[str, MetaFeatures],
    surrogates: Mapping[str, SurrogateModel],
    params: LodoParams = LodoParams(),
    evaluator: Callable | None = None,
    datasets: Sequence[str] | None = None,
) -> BenchmarkResult:
    """Hold out each dataset in turn; train defaults on the rest and score them on the held-out surrogate.

    ``surrogates`` should contain only quality-approved datasets; its key
    order fixes the dataset order of the result.
    """
    if not methods:
        raise ValidationError("no methods to benchmark")
    ids = list(datasets) if datasets is not None else list(surrogates)
    for d in ids:
        if d not in surrogates:
            raise ValidationError(f"missing surrogate for dataset {d!r}")
        if d not in metafeatures:
            raise ValidationError(f"missing meta-features for dataset {d!r}")
    pool_surr = {d: surrogates[d] for d in surrogates if d in metafeatures}

    def job(heldout):
        return _fold(heldout, methods, space, table, metafeatures, pool_surr, params, evaluator)

    if params.threads > 1:
        with ThreadPoolExecutor(params.threads) as pool:
            folds = list(pool.map(job, ids))
    else:
        folds = [job(d) for d in ids]

    result = BenchmarkResult(space.algorithm, list(methods), ids, {m: {} for m in methods})
    for d, (scores, configs, external) in zip(ids, folds):
        for m in methods:
            result.scores[m][d] = scores[m]
            if m in configs:
                result.configs.setdefault(m, {})[d] = configs[m]
            if m in external:
                result.external.setdefault(m, {})[d] = external[m]
    return result
