"""Exact computation over finitely supported distributions.

:class:`ExactBackend` answers every nuisance query by enumeration (group
means, probability masses), so running the ordinary forward and backward
passes against it yields the parameter value and its influence function
with no estimation error.  :func:`gateaux_check` differentiates the exact
parameter along point-mass mixtures as an independent check.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graph import FN_Z, ParameterGraph, fn_x
from .hilbert import Element, Frame, NumericError, function, scalar
from .estimator import ForwardPass, backward_pass, forward_pass

__all__ = [
    "DiscreteDistribution", "ExactBackend", "exact_forward", "exact_eif",
    "exact_psi", "eif_values", "gateaux_check",
]


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probabilities ``probs`` on distinct records ``support`` (all with the same columns)."""

    support: tuple
    probs: np.ndarray

    def __init__(self, support: Sequence[Mapping[str, float]], probs, check: bool = True):
        support = tuple({k: float(v) for k, v in r.items()} for r in support)
        probs = np.asarray(probs, dtype=float)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if check:
            self._check()

    def _check(self):
        if len(self.support) == 0 or len(self.support) != len(self.probs):
            raise ValueError("support and probs must be nonempty and of equal length")
        if np.any(self.probs <= 0):
            raise ValueError("probabilities must be strictly positive")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {np.sum(self.probs)!r}, not 1")
        keys = set(self.support[0])
        if any(set(r) != keys for r in self.support):
            raise ValueError("all support records need the same columns")
        if len({tuple(sorted(r.items())) for r in self.support}) != len(self.support):
            raise ValueError("support records must be distinct")

    @property
    def columns(self) -> tuple:
        return tuple(self.support[0])

    def frame(self) -> Frame:
        return Frame({c: [r[c] for r in self.support] for c in self.columns}, len(self.support))

    def mix_point(self, index: int, eps: float) -> "DiscreteDistribution":
        """``(1 - eps) P + eps * delta_z`` for the support point ``z = support[index]``."""
        probs = (1.0 - eps) * self.probs
        probs[index] += eps
        return DiscreteDistribution(self.support, probs, check=False)

    def index_of(self, record: Mapping[str, float]) -> int:
        key = {c: float(record[c]) for c in self.columns}
        for i, r in enumerate(self.support):
            if r == key:
                return i
        raise KeyError(f"{record} is not a support point")

    @classmethod
    def from_json(cls, text: str) -> "DiscreteDistribution":
        doc = json.loads(text)
        return cls(doc["support"], doc["probs"])

    def to_json(self) -> str:
        return json.dumps({"support": list(self.support), "probs": self.probs.tolist()})


def _keys(frame: Frame, columns) -> list:
    if not columns:
        return [()] * frame.n
    return list(zip(*(frame.column(c).tolist() for c in columns)))


class ExactBackend:
    """Backend whose "fits" are exact enumerations over a discrete distribution."""

    def __init__(self, dist: DiscreteDistribution):
        self.dist = dist
        self.frame = dist.frame()
        self.weights = dist.probs
        self.cfg = None

    def mean(self, values) -> float:
        return float(np.dot(self.weights, values))

    def _table(self, values, columns) -> dict:
        sums: dict = {}
        mass: dict = {}
        for key, p, v in zip(_keys(self.frame, columns), self.weights, values):
            sums[key] = sums.get(key, 0.0) + p * v
            mass[key] = mass.get(key, 0.0) + p
        return {k: sums[k] / mass[k] for k in sums}

    @staticmethod
    def _lookup(table, columns, origin):
        def fn(fr):
            out = np.empty(fr.n)
            for i, key in enumerate(_keys(fr, columns)):
                try:
                    out[i] = table[key]
                except KeyError:
                    raise NumericError(f"conditioning event {dict(zip(columns, key))} has zero probability",
                                       origin) from None
            return out
        return fn

    def regress(self, values, given, origin=None, tune_key=None) -> Element:
        given = tuple(given)
        table = self._table(np.asarray(values, dtype=float), given)
        return function(fn_x(given), self._lookup(table, given, origin), given, origin)

    def density(self, columns, given, origin=None) -> Element:
        cols = tuple(columns) + tuple(given)
        joint: dict = {}
        for key, p in zip(_keys(self.frame, cols), self.weights):
            joint[key] = joint.get(key, 0.0) + p
        marg: dict = {}
        d = len(columns)
        for key, p in joint.items():
            marg[key[d:]] = marg.get(key[d:], 0.0) + p

        def fn(fr):
            out = np.empty(fr.n)
            for i, key in enumerate(_keys(fr, cols)):
                m = marg.get(key[d:])
                if m is None:
                    raise NumericError(f"conditioning event {dict(zip(given, key[d:]))} has zero probability",
                                       origin)
                out[i] = joint.get(key, 0.0) / m
            return out

        return function(FN_Z, fn, cols, origin)

    def propensity(self, column, given, origin=None) -> Element:
        a = self.frame.column(column)
        if not np.any(a == 1):
            raise NumericError(f"no support point with {column}=1", origin)
        if not given:
            return scalar(self.mean(a), origin)
        return self.regress(a, given, origin)

    def halves(self):
        return self, self


def exact_forward(graph: ParameterGraph, P: DiscreteDistribution) -> ForwardPass:
    """Every node value under ``P``; ``.psi`` is the parameter."""
    return forward_pass(graph, ExactBackend(P))


def exact_psi(graph: ParameterGraph, P: DiscreteDistribution) -> float:
    return exact_forward(graph, P).psi


def exact_eif(graph: ParameterGraph, P: DiscreteDistribution, state: ForwardPass | None = None) -> Element:
    """The influence function of the graph's parameter at ``P`` as an evaluable element."""
    state = state or exact_forward(graph, P)
    return backward_pass(state)


def eif_values(graph: ParameterGraph, P: DiscreteDistribution) -> np.ndarray:
    """Influence function evaluated at each support point, in support order."""
    state = exact_forward(graph, P)
    return state.backend.frame.eval(backward_pass(state))


def gateaux_check(graph: ParameterGraph, P: DiscreteDistribution, z, h: float = 1e-5,
                  eif: np.ndarray | None = None) -> tuple[float, float, float]:
    """Central difference of the parameter along ``(1 - e) P + e delta_z`` at ``e = 0``.

    ``z`` is a support index or a record.  Returns ``(fd, eif(z), |fd - eif(z)|)``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    index = z if isinstance(z, (int, np.integer)) else P.index_of(z)
    up = exact_psi(graph, P.mix_point(index, h))
    down = exact_psi(graph, P.mix_point(index, -h))
    fd = (up - down) / (2.0 * h)
    if eif is None:
        eif = eif_values(graph, P)
    value = float(eif[index])
    return fd, value, abs(fd - value)
