"""Typed expression trees for symbolic hyperparameter defaults.

A formula is a tree of operator nodes over two kinds of terminals: dataset
meta-features and ephemeral constants.  Terminals come in two classes.  The
integer class holds the count-valued meta-features ``n, po, p, m`` and the
integer ephemeral ``c_i``; the float class holds ``rc, mcp, mkd, xvar`` and
the float ephemeral ``c_f``.

Typing is deliberately thin: every operator argument is a float slot (any
terminal or operator is accepted), and an integer-valued hyperparameter may
be rooted at an operator or an integer-class terminal but never at a bare
float-class terminal.

Formulas print in prefix form, e.g. ``truediv(mkd, xvar)``, and
:func:`parse_formula` is its exact inverse.
"""

from __future__ import annotations

import math
import re
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, fields
from typing import Any, Union

import numpy as np

from .errors import FormulaSyntaxError, FormulaTypeError, ValidationError

INTEGER = "integer"
FLOAT = "float"
KINDS = (INTEGER, FLOAT)

UNARY = ("exp", "neg")
BINARY = ("add", "sub", "mul", "truediv", "pow", "max", "min")
QUATERNARY = ("if_greater",)
OPERATORS = UNARY + BINARY + QUATERNARY
ARITY = {**{o: 1 for o in UNARY}, **{o: 2 for o in BINARY}, **{o: 4 for o in QUATERNARY}}

INT_FEATURES = ("n", "po", "p", "m")
FLOAT_FEATURES = ("rc", "mcp", "mkd", "xvar")
METAFEATURE_NAMES = INT_FEATURES + FLOAT_FEATURES

# Terminal symbols in the order random generation draws them from.
# "c_i" and "c_f" stand for a freshly sampled ephemeral of that class.
INT_TERMINALS = INT_FEATURES + ("c_i",)
FLOAT_TERMINALS = FLOAT_FEATURES + ("c_f",)

EPHEMERAL_INT_RANGE = (1, 1024)
EPHEMERAL_FLOAT_RANGE = (2.0**-10, 1.0)


@dataclass(frozen=True)
class MetaFeatures:
    """The eight cheap dataset characteristics formulas may refer to."""

    n: float
    po: float
    p: float
    m: float
    rc: float
    mcp: float
    mkd: float
    xvar: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float, np.integer, np.floating)) or math.isnan(value):
                raise ValidationError(f"meta-feature {f.name} must be a number, got {value!r}")
        problems = []
        if self.n < 1:
            problems.append("n >= 1")
        if self.po < 1:
            problems.append("po >= 1")
        if self.p < 1:
            problems.append("p >= 1")
        if self.m < 2:
            problems.append("m >= 2")
        if not 0 <= self.rc <= 1:
            problems.append("0 <= rc <= 1")
        # small slack: mcp is usually a rounded proportion
        if not (1.0 / self.m - 1e-9 <= self.mcp <= 1):
            problems.append("1/m <= mcp <= 1")
        if self.mkd < 0:
            problems.append("mkd >= 0")
        if self.xvar < 0:
            problems.append("xvar >= 0")
        if problems:
            raise ValidationError("invalid meta-features, require " + ", ".join(problems))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MetaFeatures:
        missing = [k for k in METAFEATURE_NAMES if k not in d]
        if missing:
            raise ValidationError(f"meta-features missing fields: {missing}")
        extra = sorted(set(d) - set(METAFEATURE_NAMES))
        if extra:
            raise ValidationError(f"unknown meta-feature fields: {extra}")
        return cls(**{k: d[k] for k in METAFEATURE_NAMES})

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METAFEATURE_NAMES}


class Expr:
    """Base class of formula nodes.  Nodes are immutable and compare structurally."""

    __slots__ = ()

    def __str__(self) -> str:
        return print_formula(self)


@dataclass(frozen=True)
class Op(Expr):
    name: str
    children: tuple[Expr, ...]

    def __post_init__(self):
        if self.name not in ARITY:
            raise ValidationError(f"unknown operator {self.name!r}")
        if len(self.children) != ARITY[self.name]:
            raise ValidationError(
                f"{self.name} takes {ARITY[self.name]} arguments, got {len(self.children)}"
            )


@dataclass(frozen=True)
class Feature(Expr):
    name: str

    def __post_init__(self):
        if self.name not in METAFEATURE_NAMES:
            raise ValidationError(f"unknown meta-feature {self.name!r}")

    @property
    def kind(self) -> str:
        return INTEGER if self.name in INT_FEATURES else FLOAT


@dataclass(frozen=True)
class Const(Expr):
    """Ephemeral constant; ``integer`` marks the ``c_i`` class."""

    value: float
    integer: bool = False

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValidationError(f"constants must be finite and non-negative, got {self.value!r}")
        if self.integer and self.value != int(self.value):
            raise ValidationError(f"integer constant with fractional value {self.value!r}")

    @property
    def kind(self) -> str:
        return INTEGER if self.integer else FLOAT


Terminal = Union[Feature, Const]


def is_terminal(e: Expr) -> bool:
    return not isinstance(e, Op)


def terminal_kind(e: Expr) -> str:
    """Class of a node when it sits in a slot: operators count as integer class."""
    if isinstance(e, Op):
        return INTEGER
    return e.kind


# --------------------------------------------------------------------------
# sampling


def round_half_away(x):
    """Round to nearest integer, ties away from zero.  Non-finite values pass through."""
    a = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        r = np.sign(a) * np.floor(np.abs(a) + 0.5)
    if np.ndim(r) == 0:
        return float(r)
    return r


def sample_ephemeral(kind: str, rng: np.random.Generator) -> float:
    """Draw an ephemeral constant.

    Float constants are log-uniform on ``[2**-10, 1]``; integer constants are
    log-uniform on ``[1, 2**10]`` and then rounded, so they land in ``[1, 1024]``.
    """
    u = rng.random()
    if kind == FLOAT:
        return float(2.0 ** (-10.0 + 10.0 * u))
    if kind == INTEGER:
        return max(1.0, round_half_away(2.0 ** (10.0 * u)))
    raise ValueError(f"unknown kind {kind!r}")


def random_terminal(slot: str, rng: np.random.Generator, constant_only: bool = False) -> Terminal:
    if slot == INTEGER:
        choices = ("c_i",) if constant_only else INT_TERMINALS
    else:
        choices = ("c_i", "c_f") if constant_only else INT_TERMINALS + FLOAT_TERMINALS
    return make_terminal(choices[rng.integers(len(choices))], rng)


def make_terminal(symbol: str, rng: np.random.Generator) -> Terminal:
    if symbol == "c_i":
        return Const(sample_ephemeral(INTEGER, rng), integer=True)
    if symbol == "c_f":
        return Const(sample_ephemeral(FLOAT, rng), integer=False)
    return Feature(symbol)


def random_expr(
    slot: str,
    max_depth: int,
    rng: np.random.Generator,
    constant_only: bool = False,
    p_operator: float = 0.5,
) -> Expr:
    """Grow a random well-typed tree of depth at most ``max_depth``.

    Each position becomes an operator with probability ``p_operator`` while
    depth remains, otherwise a terminal valid for the slot.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if max_depth == 0 or rng.random() >= p_operator:
        return random_terminal(slot, rng, constant_only)
    name = OPERATORS[rng.integers(len(OPERATORS))]
    children = tuple(
        random_expr(FLOAT, max_depth - 1, rng, constant_only, p_operator) for _ in range(ARITY[name])
    )
    return Op(name, children)


# --------------------------------------------------------------------------
# evaluation


def _evaluate(e: Expr, env: Mapping[str, Any]):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Feature):
        return env[e.name]
    args = [_evaluate(c, env) for c in e.children]
    name = e.name
    if name == "add":
        return np.add(args[0], args[1])
    if name == "sub":
        return np.subtract(args[0], args[1])
    if name == "mul":
        return np.multiply(args[0], args[1])
    if name == "truediv":
        return np.true_divide(args[0], args[1])
    if name == "pow":
        return np.power(args[0], args[1])
    if name == "max":
        return np.maximum(args[0], args[1])
    if name == "min":
        return np.minimum(args[0], args[1])
    if name == "exp":
        return np.exp(args[0])
    if name == "neg":
        return np.negative(args[0])
    if name == "if_greater":
        a, b, c, d = args
        out = np.where(a > b, c, d)
        # comparisons against nan are false; propagate instead of silently picking d
        return np.where(np.isnan(a) | np.isnan(b), np.nan, out)
    raise AssertionError(name)


def metafeature_env(mf: MetaFeatures | Mapping[str, Any]) -> dict[str, Any]:
    if isinstance(mf, MetaFeatures):
        return {k: np.float64(getattr(mf, k)) for k in METAFEATURE_NAMES}
    return {k: np.asarray(mf[k], dtype=float) for k in METAFEATURE_NAMES}


def eval_expr(e: Expr, mf: MetaFeatures | Mapping[str, Any]):
    """Evaluate ``e`` in extended-real arithmetic.

    ``mf`` is a single :class:`MetaFeatures` (returns a float) or a mapping of
    meta-feature name to equally-shaped arrays (returns an array).  Division by
    zero, overflow and invalid powers produce inf/nan rather than raising.
    """
    with np.errstate(all="ignore"):
        out = _evaluate(e, metafeature_env(mf))
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


# --------------------------------------------------------------------------
# structure


def depth(e: Expr) -> int:
    if isinstance(e, Op):
        return 1 + max(depth(c) for c in e.children)
    return 0


def node_count(e: Expr) -> int:
    if isinstance(e, Op):
        return 1 + sum(node_count(c) for c in e.children)
    return 1


def metrics(e: Expr) -> tuple[int, int]:
    return depth(e), node_count(e)


def is_well_typed(e: Expr, slot: str) -> bool:
    if slot == INTEGER and is_terminal(e) and e.kind == FLOAT:
        return False

    def ok(node: Expr) -> bool:
        if isinstance(node, Op):
            return len(node.children) == ARITY[node.name] and all(ok(c) for c in node.children)
        return isinstance(node, (Feature, Const))

    return ok(e)


Path = tuple[int, ...]


def iter_nodes(e: Expr, path: Path = ()) -> Iterator[tuple[Path, Expr]]:
    """Pre-order traversal yielding ``(path, node)``; a path lists child indices from the root."""
    yield path, e
    if isinstance(e, Op):
        for i, c in enumerate(e.children):
            yield from iter_nodes(c, path + (i,))


def get_node(e: Expr, path: Path) -> Expr:
    for i in path:
        e = e.children[i]
    return e


def replace_node(e: Expr, path: Path, new: Expr) -> Expr:
    if not path:
        return new
    head, rest = path[0], path[1:]
    children = list(e.children)
    children[head] = replace_node(children[head], rest, new)
    return Op(e.name, tuple(children))


def contains_metafeature(e: Expr) -> bool:
    return any(isinstance(node, Feature) for _, node in iter_nodes(e))


# --------------------------------------------------------------------------
# text form


def _format_const(c: Const) -> str:
    if c.integer:
        return str(int(c.value))
    return repr(float(c.value))


def print_formula(e: Expr) -> str:
    if isinstance(e, Const):
        return _format_const(e)
    if isinstance(e, Feature):
        return e.name
    return f"{e.name}({', '.join(print_formula(c) for c in e.children)})"


_TOKEN = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<punct>[(),])"
    r"|(?P<ws>\s+)"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind: str, value: str | None = None):
        tok = self.tokens[self.i]
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = repr(value) if value is not None else kind
            got = repr(tok[1]) if tok[0] != "end" else "end of input"
            raise FormulaSyntaxError(f"expected {want}, got {got}", tok[2])
        self.i += 1
        return tok

    def expr(self) -> Expr:
        kind, value, pos = self.peek()
        if kind == "num":
            self.i += 1
            if re.fullmatch(r"\d+", value):
                return Const(float(int(value)), integer=True)
            return Const(float(value), integer=False)
        if kind == "name":
            self.i += 1
            if value in ARITY:
                self.take("punct", "(")
                children = [self.expr()]
                while self.peek()[1] == ",":
                    self.i += 1
                    children.append(self.expr())
                self.take("punct", ")")
                if len(children) != ARITY[value]:
                    raise FormulaSyntaxError(
                        f"{value} takes {ARITY[value]} arguments, got {len(children)}", pos
                    )
                return Op(value, tuple(children))
            if value in METAFEATURE_NAMES:
                return Feature(value)
            raise FormulaSyntaxError(f"unknown symbol {value!r}", pos)
        got = repr(value) if kind != "end" else "end of input"
        raise FormulaSyntaxError(f"expected a formula, got {got}", pos)


def parse_formula(text: str, slot: str = FLOAT) -> Expr:
    """Parse prefix-notation text back into a tree, enforcing the slot's root rule."""
    parser = _Parser(text)
    e = parser.expr()
    parser.take("end")
    if not is_well_typed(e, slot):
        raise FormulaTypeError(f"{text.strip()!r} is a float-class terminal and cannot fill an integer slot")
    return e


# --------------------------------------------------------------------------
# configurations


@dataclass(frozen=True)
class SymbolicConfiguration:
    """One formula per tunable hyperparameter, in search-space order."""

    algorithm: str
    components: tuple[Expr, ...]

    def formulas(self) -> list[str]:
        return [print_formula(c) for c in self.components]

    def key(self) -> str:
        return "; ".join(self.formulas())

    def depth(self) -> int:
        return max(depth(c) for c in self.components)

    def node_count(self) -> int:
        return sum(node_count(c) for c in self.components)

    def check(self, space) -> None:
        if self.algorithm != space.algorithm:
            raise ValidationError(f"configuration for {self.algorithm} used with {space.algorithm} space")
        if len(self.components) != len(space.tunable):
            raise ValidationError(
                f"{space.algorithm} has {len(space.tunable)} tunable hyperparameters, "
                f"configuration has {len(self.components)}"
            )
        for hp, comp in zip(space.tunable, self.components):
            if not is_well_typed(comp, hp.kind):
                raise FormulaTypeError(f"{print_formula(comp)!r} cannot fill integer hyperparameter {hp.name}")

    @classmethod
    def from_formulas(cls, space, formulas: Sequence[str]) -> SymbolicConfiguration:
        if len(formulas) != len(space.tunable):
            raise ValidationError(
                f"{space.algorithm} needs {len(space.tunable)} formulas, got {len(formulas)}"
            )
        comps = tuple(parse_formula(f, hp.kind) for hp, f in zip(space.tunable, formulas))
        return cls(space.algorithm, comps)


def realize_many(config: SymbolicConfiguration, env: Mapping[str, np.ndarray], kinds: Sequence[str]) -> np.ndarray:
    """Evaluate every component over a batch of datasets.

    ``env`` maps meta-feature names to arrays of length K; returns a K x M
    array with integer components rounded.  nan entries mark invalid slots.
    """
    k = len(next(iter(env.values())))
    out = np.empty((k, len(config.components)))
    with np.errstate(all="ignore"):
        for j, (comp, kind) in enumerate(zip(config.components, kinds)):
            col = np.broadcast_to(_evaluate(comp, env), (k,)).astype(float)
            if kind == INTEGER:
                col = round_half_away(col)
            out[:, j] = col
    return out


def realize_configuration(config: SymbolicConfiguration, mf: MetaFeatures, space) -> tuple[np.ndarray, np.ndarray]:
    """Turn a symbolic configuration into concrete values for one dataset.

    Returns ``(values, valid)``.  Infinite values stay valid (they are clamped
    later against the surrogate's observed range); nan slots are invalid.
    """
    config.check(space)
    env = {k: np.array([v]) for k, v in metafeature_env(mf).items()}
    values = realize_many(config, env, [hp.kind for hp in space.tunable])[0]
    return values, ~np.isnan(values)
