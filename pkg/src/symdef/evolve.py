"""Multi-objective genetic programming over symbolic configurations.

A (mu + lambda) loop with NSGA-II survival on two minimized objectives: the
surrogate loss ``1 - mean normalized score`` across training datasets and the
deepest component's depth.  Each offspring comes from either uniform
component crossover or a single local mutation, never both.

Randomness is split into independent streams keyed by ``(seed, generation,
offspring index)``, so a run is reproducible regardless of how many threads
evaluate fitness.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expr as ex
from .expr import FLOAT, INTEGER, Const, Expr, Feature, MetaFeatures, Op, SymbolicConfiguration
from .metadata import metafeature_arrays
from .space import SearchSpace
from .surrogate import SurrogateModel, score_batch

MUTATIONS = ("insert", "shrink", "replace_node", "replace_terminal", "mutate_ephemeral")
EPHEMERAL_SIGMA = 0.2

_INT_CLASS = ex.INT_TERMINALS
_FLOAT_CLASS = ex.FLOAT_TERMINALS


@dataclass(frozen=True)
class EvolutionParams:
    mu: int = 20
    lam: int = 100
    generations: int = 1000
    init_max_depth: int = 3
    p_crossover: float = 0.5
    patience: int = 100  # 0 disables early stopping
    constant_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mu < 2:
            raise ValueError("mu must be >= 2")
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if self.generations < 0 or self.patience < 0 or self.init_max_depth < 0:
            raise ValueError("generations, patience and init_max_depth must be >= 0")
        if not 0.0 <= self.p_crossover <= 1.0:
            raise ValueError("p_crossover must be in [0, 1]")


@dataclass
class Individual:
    config: SymbolicConfiguration
    loss: float
    depth: int
    node_count: int

    @property
    def objectives(self) -> tuple[float, int]:
        return self.loss, self.depth

    def to_dict(self) -> dict:
        return {
            "formulas": self.config.formulas(),
            "loss": self.loss,
            "depth": self.depth,
            "node_count": self.node_count,
        }


# --------------------------------------------------------------------------
# fitness


class FitnessEvaluator:
    """Scores configurations on a fixed list of training surrogates.

    Results are cached by printed formula; evaluation is pure, so the cache
    never changes an outcome.
    """

    def __init__(
        self,
        space: SearchSpace,
        surrogates: Sequence[SurrogateModel],
        metafeatures: Mapping[str, MetaFeatures],
        threads: int = 1,
    ):
        if not surrogates:
            raise ValueError("need at least one training surrogate")
        self.space = space
        self.kinds = space.kinds
        self.surrogates = list(surrogates)
        self.env = metafeature_arrays(metafeatures, [s.dataset_id for s in self.surrogates])
        self.threads = threads
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None
        self._cache: dict[str, float] = {}
        self.evaluations = 0

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def scores(self, configs: Sequence[SymbolicConfiguration]) -> np.ndarray:
        """Per-dataset surrogate scores, shape (len(configs), K); invalid slots score 0."""
        realized = np.stack([ex.realize_many(c, self.env, self.kinds) for c in configs])

        def column(k):
            return score_batch(self.surrogates[k], realized[:, k, :])

        ks = range(len(self.surrogates))
        cols = list(self._pool.map(column, ks)) if self._pool else [column(k) for k in ks]
        return np.stack(cols, axis=1)

    def losses(self, configs: Sequence[SymbolicConfiguration]) -> list[float]:
        keys = [c.key() for c in configs]
        todo: dict[str, SymbolicConfiguration] = {}
        for k, c in zip(keys, configs):
            if k not in self._cache and k not in todo:
                todo[k] = c
        if todo:
            S = self.scores(list(todo.values()))
            self.evaluations += len(todo)
            for k, row in zip(todo, S):
                self._cache[k] = float(1.0 - np.mean(row))
        return [self._cache[k] for k in keys]

    def individuals(self, configs: Sequence[SymbolicConfiguration]) -> list[Individual]:
        return [
            Individual(c, loss, c.depth(), c.node_count()) for c, loss in zip(configs, self.losses(configs))
        ]


def fitness(
    config: SymbolicConfiguration,
    surrogates: Sequence[SurrogateModel],
    metafeatures: Mapping[str, MetaFeatures],
    space: SearchSpace,
) -> tuple[float, int]:
    """``(1 - mean surrogate score, max component depth)`` for one configuration."""
    with FitnessEvaluator(space, surrogates, metafeatures) as ev:
        return ev.losses([config])[0], config.depth()


# --------------------------------------------------------------------------
# NSGA-II machinery


def nondominated_sort(objectives) -> list[list[int]]:
    """Partition row indices into Pareto fronts (all objectives minimized)."""
    F = np.asarray(objectives, dtype=float)
    n = len(F)
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dominates = le & lt  # [i, j]: i dominates j
    counts = dominates.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dominates[i]):
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(objectives) -> np.ndarray:
    """Crowding distance of each row within one front; boundary rows get inf."""
    F = np.asarray(objectives, dtype=float)
    n = len(F)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(F.shape[1]):
        order = np.argsort(F[:, m], kind="stable")
        lo, hi = F[order[0], m], F[order[-1], m]
        dist[order[0]] = dist[order[-1]] = np.inf
        if hi == lo:
            continue
        gaps = (F[order[2:], m] - F[order[:-2], m]) / (hi - lo)
        dist[order[1:-1]] += gaps
    return dist


def rank_and_crowd(pop: Sequence[Individual]) -> tuple[np.ndarray, np.ndarray]:
    F = np.array([ind.objectives for ind in pop], dtype=float)
    ranks = np.empty(len(pop), dtype=int)
    crowd = np.empty(len(pop))
    for r, front in enumerate(nondominated_sort(F)):
        ranks[front] = r
        crowd[front] = crowding_distance(F[front])
    return ranks, crowd


def tournament(i: int, j: int, ranks, crowd, rng: np.random.Generator) -> int:
    if ranks[i] != ranks[j]:
        return i if ranks[i] < ranks[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return i if rng.random() < 0.5 else j


def select_parents(ranks, crowd, rng: np.random.Generator) -> tuple[int, int]:
    """Two independent binary tournaments; lower front wins, then larger crowding, then a coin."""
    n = len(ranks)
    winners = []
    for _ in range(2):
        i, j = rng.integers(n, size=2)
        winners.append(tournament(int(i), int(j), ranks, crowd, rng))
    return winners[0], winners[1]


def survive(pop: Sequence[Individual], mu: int) -> list[Individual]:
    """Elitist NSGA-II truncation to ``mu`` survivors."""
    F = np.array([ind.objectives for ind in pop], dtype=float)
    chosen: list[int] = []
    for front in nondominated_sort(F):
        if len(chosen) + len(front) <= mu:
            chosen.extend(front)
            continue
        d = crowding_distance(F[front])
        order = sorted(range(len(front)), key=lambda k: (-d[k], front[k]))
        chosen.extend(front[k] for k in order[: mu - len(chosen)])
        break
    return [pop[i] for i in chosen]


# --------------------------------------------------------------------------
# variation


def crossover(a: SymbolicConfiguration, b: SymbolicConfiguration, rng: np.random.Generator) -> SymbolicConfiguration:
    """Uniform crossover on whole components with at least one taken from each parent."""
    if a.algorithm != b.algorithm or len(a.components) != len(b.components):
        raise ValueError("parents must configure the same algorithm")
    m = len(a.components)
    if m < 2:
        raise ValueError("crossover needs at least two components")
    while True:
        from_a = rng.random(m) < 0.5
        if from_a.any() and not from_a.all():
            break
    comps = tuple(ca if take else cb for ca, cb, take in zip(a.components, b.components, from_a))
    return SymbolicConfiguration(a.algorithm, comps)


def _terminal_symbol(t: Expr) -> str:
    if isinstance(t, Feature):
        return t.name
    return "c_i" if t.integer else "c_f"


def _terminal_alternatives(t: Expr, constant_only: bool) -> list[str]:
    symbol = _terminal_symbol(t)
    cls = _INT_CLASS if symbol in _INT_CLASS else _FLOAT_CLASS
    alts = [s for s in cls if s != symbol]
    if constant_only:
        alts = [s for s in alts if s in ("c_i", "c_f")]
    return alts


def _shrink_options(e: Expr, slot: str) -> list[tuple[ex.Path, int]]:
    out = []
    for path, node in ex.iter_nodes(e):
        if not isinstance(node, Op):
            continue
        for ci, child in enumerate(node.children):
            if not path and slot == INTEGER and ex.terminal_kind(child) == FLOAT:
                continue
            out.append((path, ci))
    return out


def applicable_mutations(e: Expr, slot: str, constant_only: bool = False) -> list[str]:
    nodes = list(ex.iter_nodes(e))
    ops = [n for _, n in nodes if isinstance(n, Op)]
    terms = [n for _, n in nodes if not isinstance(n, Op)]
    out = ["insert"]
    if _shrink_options(e, slot):
        out.append("shrink")
    if any(ex.ARITY[o.name] < 4 for o in ops):
        out.append("replace_node")
    if any(_terminal_alternatives(t, constant_only) for t in terms):
        out.append("replace_terminal")
    if any(isinstance(t, Const) for t in terms):
        out.append("mutate_ephemeral")
    return out


def perturb_ephemeral(c: Const, rng: np.random.Generator) -> Const:
    """Gaussian step proportional to the value; the result always differs from the input."""
    v = c.value
    lo_i, hi_i = ex.EPHEMERAL_INT_RANGE
    if c.integer:
        sigma = EPHEMERAL_SIGMA * max(abs(v), 1.0)
        delta = ex.round_half_away(rng.normal(0.0, sigma))
        if delta == 0:
            delta = 1.0 if rng.random() < 0.5 else -1.0
        new = min(max(v + delta, lo_i), hi_i)
        if new == v:
            new = min(max(v - delta, lo_i), hi_i)
        return Const(float(new), integer=True)
    lo_f, hi_f = ex.EPHEMERAL_FLOAT_RANGE
    sigma = EPHEMERAL_SIGMA * (abs(v) if v != 0 else lo_f)
    for _ in range(100):
        new = v + rng.normal(0.0, sigma)
        if 0.0 < new <= hi_f and new != v:
            return Const(float(new))
    # only reachable for literals far outside (0, 1]
    new = min(max(v, lo_f), hi_f)
    return Const(new if new != v else hi_f / 2)


def mutate_expr(e: Expr, slot: str, rng: np.random.Generator, constant_only: bool = False) -> tuple[Expr, str]:
    """Apply one uniformly chosen applicable mutation; returns ``(new tree, operator name)``."""
    options = applicable_mutations(e, slot, constant_only)
    kind = options[rng.integers(len(options))]
    nodes = list(ex.iter_nodes(e))

    if kind == "insert":
        path, node = nodes[rng.integers(len(nodes))]
        name = ex.OPERATORS[rng.integers(len(ex.OPERATORS))]
        arity = ex.ARITY[name]
        pos = rng.integers(arity)
        children = [
            node if i == pos else ex.random_terminal(FLOAT, rng, constant_only) for i in range(arity)
        ]
        return ex.replace_node(e, path, Op(name, tuple(children))), kind

    if kind == "shrink":
        choices = _shrink_options(e, slot)
        path, ci = choices[rng.integers(len(choices))]
        return ex.replace_node(e, path, ex.get_node(e, path).children[ci]), kind

    if kind == "replace_node":
        cands = [(p, n) for p, n in nodes if isinstance(n, Op) and ex.ARITY[n.name] < 4]
        path, node = cands[rng.integers(len(cands))]
        group = ex.UNARY if ex.ARITY[node.name] == 1 else ex.BINARY
        alts = [o for o in group if o != node.name]
        return ex.replace_node(e, path, Op(alts[rng.integers(len(alts))], node.children)), kind

    if kind == "replace_terminal":
        cands = [(p, n) for p, n in nodes if not isinstance(n, Op) and _terminal_alternatives(n, constant_only)]
        path, node = cands[rng.integers(len(cands))]
        alts = _terminal_alternatives(node, constant_only)
        return ex.replace_node(e, path, ex.make_terminal(alts[rng.integers(len(alts))], rng)), kind

    cands = [(p, n) for p, n in nodes if isinstance(n, Const)]
    path, node = cands[rng.integers(len(cands))]
    return ex.replace_node(e, path, perturb_ephemeral(node, rng)), kind


def mutate(
    config: SymbolicConfiguration,
    kinds: Sequence[str],
    rng: np.random.Generator,
    constant_only: bool = False,
) -> SymbolicConfiguration:
    """Mutate exactly one uniformly chosen component."""
    j = int(rng.integers(len(config.components)))
    new, _ = mutate_expr(config.components[j], kinds[j], rng, constant_only)
    comps = list(config.components)
    comps[j] = new
    return SymbolicConfiguration(config.algorithm, tuple(comps))


def random_configuration(
    space: SearchSpace, rng: np.random.Generator, max_depth: int = 3, constant_only: bool = False
) -> SymbolicConfiguration:
    comps = tuple(ex.random_expr(h.kind, max_depth, rng, constant_only) for h in space.tunable)
    return SymbolicConfiguration(space.algorithm, comps)


# --------------------------------------------------------------------------
# the loop


@dataclass
class TraceRow:
    generation: int
    best_loss: float
    front1_size: int


@dataclass
class EvolutionResult:
    params: EvolutionParams
    algorithm: str
    population: list[Individual]
    archive: list[Individual]
    trace: list[TraceRow] = field(default_factory=list)
    training_ids: list[str] = field(default_factory=list)

    @property
    def default(self) -> Individual:
        return select_default(self.archive)

    def manifest(self) -> dict:
        best = self.default
        return {
            "algorithm": self.algorithm,
            "params": asdict(self.params),
            "seed": self.params.seed,
            "training_datasets": list(self.training_ids),
            "default": best.to_dict(),
            "archive": [ind.to_dict() for ind in self.archive],
            "trace": [asdict(t) for t in self.trace],
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"

    def trace_csv(self) -> str:
        lines = ["generation,best_loss,front1_size"]
        lines += [f"{t.generation},{t.best_loss!r},{t.front1_size}" for t in self.trace]
        return "\n".join(lines) + "\n"


def _sort_key(ind: Individual):
    return (ind.loss, ind.depth, ind.node_count, ind.config.key())


def select_default(archive: Sequence[Individual]) -> Individual:
    """Best loss, then shallower, then fewer nodes, then the smaller printed form."""
    if not archive:
        raise ValueError("empty archive")
    return min(archive, key=_sort_key)


def pareto_archive(pop: Sequence[Individual]) -> list[Individual]:
    F = np.array([ind.objectives for ind in pop], dtype=float)
    first = nondominated_sort(F)[0]
    seen, out = set(), []
    for ind in sorted((pop[i] for i in first), key=_sort_key):
        if ind.config.key() not in seen:
            seen.add(ind.config.key())
            out.append(ind)
    return out


def evolve(
    params: EvolutionParams,
    space: SearchSpace,
    surrogates: Sequence[SurrogateModel],
    metafeatures: Mapping[str, MetaFeatures],
    threads: int = 1,
    callback: Callable[[int, list[Individual]], None] | None = None,
) -> EvolutionResult:
    kinds = space.kinds
    seed = params.seed
    with FitnessEvaluator(space, surrogates, metafeatures, threads) as evaluator:
        init = [
            random_configuration(space, np.random.default_rng([seed, 0, i]), params.init_max_depth, params.constant_only)
            for i in range(params.mu)
        ]
        pop = evaluator.individuals(init)
        ranks, crowd = rank_and_crowd(pop)
        trace = [TraceRow(0, min(ind.loss for ind in pop), int(np.sum(ranks == 0)))]
        if callback:
            callback(0, pop)
        best, stale = trace[0].best_loss, 0
        can_cross = len(kinds) >= 2

        for gen in range(1, params.generations + 1):
            children = []
            for i in range(params.lam):
                rng = np.random.default_rng([seed, gen, i])
                a, b = select_parents(ranks, crowd, rng)
                if can_cross and rng.random() < params.p_crossover:
                    child = crossover(pop[a].config, pop[b].config, rng)
                else:
                    child = mutate(pop[a].config, kinds, rng, params.constant_only)
                child.check(space)
                children.append(child)
            pop = survive(pop + evaluator.individuals(children), params.mu)
            ranks, crowd = rank_and_crowd(pop)
            gen_best = min(ind.loss for ind in pop)
            trace.append(TraceRow(gen, gen_best, int(np.sum(ranks == 0))))
            if callback:
                callback(gen, pop)
            if gen_best < best:
                best, stale = gen_best, 0
            else:
                stale += 1
                if params.patience and stale >= params.patience:
                    break

    return EvolutionResult(
        params=params,
        algorithm=space.algorithm,
        population=pop,
        archive=pareto_archive(pop),
        trace=trace,
        training_ids=[s.dataset_id for s in surrogates],
    )
