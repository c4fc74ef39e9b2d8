"""Elements of the ambient spaces: real numbers and evaluable functions of a record.

Function-valued elements are evaluator closures over fitted models, evaluated
vectorized on a :class:`Frame` (a block of records).  A frame memoizes every
element it has evaluated, so a shared sub-expression is computed once per
frame no matter how many consumers reference it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .graph import FN_Z, SCALAR, Space

__all__ = [
    "NumericError", "Frame", "Element", "scalar", "function", "coordinate",
    "constant_function", "zero_element", "eval_element", "AdjointBundle",
    "AdjointAccumulators", "accumulate", "combine",
]


class NumericError(ArithmeticError):
    """A non-finite value or a domain violation, tagged with the producing node."""

    def __init__(self, message: str, node: str | None = None):
        self.node = node
        prefix = f"node {node}: " if node is not None else ""
        super().__init__(prefix + message)


class Frame:
    """Column arrays for ``n`` records plus a per-frame evaluation cache."""

    def __init__(self, columns: Mapping[str, Iterable[float]], n: int | None = None):
        self.columns = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if n is None:
            if len(lengths) != 1:
                raise ValueError("frame needs at least one column, all of equal length")
            n = lengths.pop()
        elif lengths and lengths != {n}:
            raise ValueError("column lengths differ from n")
        self.n = int(n)
        self._cache: dict = {}
        self._derived: dict = {}
        self.evaluations = 0

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"missing column {name!r}") from None

    def eval(self, element: "Element") -> np.ndarray:
        if element.is_scalar:
            return np.full(self.n, element.value)
        hit = self._cache.get(element)
        if hit is not None:
            return hit
        self.evaluations += 1
        try:
            out = element.fn(self)
        except NumericError:
            raise
        except ArithmeticError as exc:
            raise NumericError(str(exc), element.origin) from exc
        out = np.broadcast_to(np.asarray(out, dtype=float), (self.n,))
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite value in evaluation", element.origin)
        self._cache[element] = out
        return out

    def with_value(self, name: str, value: float) -> "Frame":
        """The same records with column ``name`` set to ``value`` (cached)."""
        key = (name, float(value))
        frame = self._derived.get(key)
        if frame is None:
            cols = dict(self.columns)
            cols[name] = np.full(self.n, float(value))
            frame = Frame(cols, self.n)
            self._derived[key] = frame
        return frame

    def take(self, idx) -> "Frame":
        return Frame({k: v[idx] for k, v in self.columns.items()})

    @classmethod
    def from_record(cls, record: Mapping[str, float]) -> "Frame":
        return cls({k: [v] for k, v in record.items()}, 1)


@dataclass(eq=False, frozen=True)
class Element:
    """A scalar (``value``) or a function (``fn: Frame -> array``) in ``space``.

    ``reads`` lists the columns the evaluator touches; for an ``FnOfX(V)``
    element it is a subset of ``V``.
    """

    space: Space
    value: float = 0.0
    fn: Callable[[Frame], np.ndarray] | None = None
    reads: frozenset = frozenset()
    origin: str | None = None

    @property
    def is_scalar(self) -> bool:
        return self.fn is None

    def retag(self, space: Space) -> "Element":
        if self.is_scalar:
            return self if space == SCALAR else constant_function(space, self.value, self.origin)
        return Element(space, fn=self.fn, reads=self.reads, origin=self.origin)


def scalar(value: float, origin=None) -> Element:
    value = float(value)
    if not np.isfinite(value):
        raise NumericError("non-finite scalar", origin)
    return Element(SCALAR, value=value, origin=origin)


def function(space: Space, fn, reads: Iterable[str], origin=None) -> Element:
    return Element(space, fn=fn, reads=frozenset(reads), origin=origin)


def coordinate(name: str, space: Space = FN_Z) -> Element:
    return function(space, lambda fr: fr.column(name), (name,), origin=name)


def constant_function(space: Space, value: float, origin=None) -> Element:
    value = float(value)
    return function(space, lambda fr: np.full(fr.n, value), (), origin)


def zero_element(space: Space) -> Element:
    if space == SCALAR:
        return scalar(0.0)
    return constant_function(space, 0.0, "zero")


def eval_element(e: Element, record: Mapping[str, float]) -> float:
    """Value of ``e`` at one record."""
    if e.is_scalar:
        return e.value
    missing = e.reads - set(record)
    if missing:
        raise KeyError(f"record lacks columns {sorted(missing)}")
    return float(Frame.from_record({k: record[k] for k in e.reads} or {"_": 0.0}).eval(e)[0])


def combine(space: Space, terms: list[Element], origin=None) -> Element:
    """Pointwise sum of ``terms`` as a single element of ``space``."""
    for t in terms:
        if t.space != space and not (t.is_scalar and t.space == SCALAR):
            raise ValueError(f"cannot add an element of {t.space} into {space}")
    if space == SCALAR:
        return scalar(sum(t.value for t in terms), origin)
    consts = sum(t.value for t in terms if t.is_scalar)
    funcs = [t for t in terms if not t.is_scalar]
    if not funcs:
        return constant_function(space, consts, origin)
    if len(funcs) == 1 and consts == 0.0:
        return funcs[0]
    reads = frozenset().union(*(t.reads for t in funcs))

    def fn(fr):
        out = fr.eval(funcs[0]).copy()
        for t in funcs[1:]:
            out += fr.eval(t)
        return out + consts if consts else out

    return function(space, fn, reads, origin)


@dataclass(frozen=True)
class AdjointBundle:
    """One backward step: a score contribution and messages to the parents."""

    f0: Element | None = None
    messages: Mapping[int, Element] = field(default_factory=dict)


class AdjointAccumulators:
    """Running sums ``f0`` and ``f_1 .. f_k``, kept as term lists and summed on demand."""

    def __init__(self, spaces: Mapping[int, Space], output: int):
        self.spaces = dict(spaces)
        self.output = output
        self._f0: list[Element] = []
        self._nodes: dict[int, list[Element]] = {j: [] for j in spaces}
        self._nodes[output] = [scalar(1.0, "seed")]

    def add_f0(self, e: Element):
        if e.space != FN_Z:
            raise ValueError(f"score contribution must be FnOfZ, got {e.space}")
        self._f0.append(e)

    def add(self, j: int, e: Element):
        want = self.spaces[j]
        if e.space != want:
            raise ValueError(f"message for node {j} lives in {e.space}, node lives in {want}")
        self._nodes[j].append(e)

    def node(self, j: int) -> Element:
        terms = self._nodes[j]
        if not terms:
            return zero_element(self.spaces[j])
        return combine(self.spaces[j], terms, origin=f"adjoint {j}")

    def has_terms(self, j: int) -> bool:
        return bool(self._nodes[j])

    @property
    def f0(self) -> Element:
        if not self._f0:
            return zero_element(FN_Z)
        return combine(FN_Z, self._f0, origin="f0")


def accumulate(acc: AdjointAccumulators, j: int, bundle: AdjointBundle):
    """Fold the bundle produced at node ``j`` into the accumulators."""
    if bundle.f0 is not None:
        acc.add_f0(bundle.f0)
    for parent, msg in bundle.messages.items():
        if parent >= j:
            raise ValueError(f"node {j} sent a message to non-parent {parent}")
        acc.add(parent, msg)
