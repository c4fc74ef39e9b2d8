"""Forward/backward passes and the cross-fitted one-step estimator.

For each fold the nuisances are fitted on the complement, the graph is run
forward to get the plug-in value and backward (seeded with 1 at the output)
to get an estimated influence function, and the plug-in is corrected by the
held-out mean of that function.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import ColumnSpec, ParameterGraph, prepare
from .hilbert import AdjointAccumulators, Element, Frame, accumulate
from .learners import LearnerConfig
from .primitives import KernelBackend, PrimitiveContext, backward_node, forward_node

__all__ = [
    "Dataset", "DataError", "FoldPlan", "FoldFailure", "ForwardPass", "FoldDiagnostics",
    "EstimateResult", "make_folds", "forward_pass", "backward_pass", "one_step_fold", "estimate",
    "Z_95",
]

Z_95 = 1.96


class DataError(ValueError):
    """Malformed input table (missing values, non-binary entries, unknown columns)."""


class FoldFailure(RuntimeError):
    """A fold's passes failed; ``cause`` is the original exception."""

    def __init__(self, fold: int, cause: BaseException):
        self.fold = fold
        self.cause = cause
        super().__init__(f"fold {fold}: {cause}")


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: Mapping[str, np.ndarray]
    schema: tuple = ()

    def __post_init__(self):
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        object.__setattr__(self, "columns", cols)
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise DataError("columns have different lengths")
        if not self.schema:
            object.__setattr__(self, "schema", tuple(ColumnSpec(k) for k in cols))
        for name, v in cols.items():
            if not np.all(np.isfinite(v)):
                raise DataError(f"column {name} has missing or non-finite values")
        for spec in self.schema:
            if spec.name not in cols:
                raise DataError(f"column {spec.name} is declared but absent")
            v = cols[spec.name]
            if spec.kind == "binary" and not np.all((v == 0) | (v == 1)):
                raise DataError(f"binary column {spec.name} has values other than 0 and 1")

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def frame(self, idx=None) -> Frame:
        if idx is None:
            return Frame(self.columns, self.n)
        return Frame({k: v[idx] for k, v in self.columns.items()}, len(idx))

    def with_schema(self, schema: Sequence[ColumnSpec]) -> "Dataset":
        return Dataset(self.columns, tuple(schema))


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # tuple of sorted index arrays

    @property
    def L(self) -> int:
        return len(self.folds)

    def assignment(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=int)
        for f, idx in enumerate(self.folds):
            out[idx] = f
        return out


def make_folds(n: int, L: int, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then deal the shuffled indices round-robin into ``L`` folds."""
    if L < 1:
        raise ValueError("need at least one fold")
    if n < 2 * L:
        raise ValueError(f"n={n} is too small for {L} folds (need n >= {2 * L})")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldPlan(tuple(np.sort(perm[f::L]) for f in range(L)))


@dataclass
class ForwardPass:
    graph: ParameterGraph
    spaces: dict
    backend: object
    contexts: dict = field(default_factory=dict)

    @property
    def values(self) -> dict:
        return {j: c.output for j, c in self.contexts.items()}

    @property
    def psi(self) -> float:
        return self.contexts[self.graph.output].output.value


def forward_pass(graph: ParameterGraph, backend) -> ForwardPass:
    """Run every node in id order against ``backend``."""
    graph, spaces = prepare(graph)
    state = ForwardPass(graph, spaces, backend)
    for node in graph.nodes:
        parents = {p: state.contexts[p].output for p in node.parents}
        ctx = PrimitiveContext(node, backend, parents, spaces)
        forward_node(ctx)
        state.contexts[node.id] = ctx
    return state


def backward_pass(state: ForwardPass) -> Element:
    """Reverse sweep seeded with 1 at the output; returns the accumulated score."""
    graph = state.graph
    acc = AdjointAccumulators(state.spaces, graph.output)
    for node in reversed(graph.nodes):
        if not acc.has_terms(node.id):
            continue
        bundle = backward_node(state.contexts[node.id], acc.node(node.id))
        accumulate(acc, node.id, bundle)
    return acc.f0


@dataclass(frozen=True)
class FoldContribution:
    value: float  # plug-in plus held-out mean of f0
    f0: np.ndarray


def one_step_fold(psi: float, f0: Element, frame: Frame, weights=None) -> FoldContribution:
    vals = frame.eval(f0)
    mean = float(np.mean(vals)) if weights is None else float(np.dot(weights, vals))
    return FoldContribution(psi + mean, vals)


@dataclass(frozen=True)
class FoldDiagnostics:
    fold: int
    size: int
    plug_in: float
    eval_mean_f0: float
    train_mean_f0: float


@dataclass(frozen=True)
class EstimateResult:
    est: float
    se: float
    ci: tuple
    n: int
    folds: int
    seed: int
    diagnostics: tuple = ()
    pseudo: np.ndarray | None = None  # plug-in + f0 per observation
    f0: np.ndarray | None = None
    fold_of: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"est": self.est, "se": self.se, "ci": [self.ci[0], self.ci[1]],
                "n": self.n, "folds": self.folds, "seed": self.seed}


def _run_fold(graph, dataset, train_idx, eval_idx, cfg, backend_factory):
    train = dataset.frame(train_idx)
    backend = backend_factory(train, cfg)
    state = forward_pass(graph, backend)
    f0 = backward_pass(state)
    psi = state.psi
    contrib = one_step_fold(psi, f0, dataset.frame(eval_idx))
    train_mean = float(np.mean(train.eval(f0)))
    return psi, contrib, train_mean


def estimate(graph: ParameterGraph, dataset: Dataset, L: int = 5, seed: int = 0,
             cfg: LearnerConfig | None = None,
             backend_factory: Callable = KernelBackend, threads: int = 1) -> EstimateResult:
    """Cross-fitted one-step estimate with a Wald interval.

    ``est`` is the size-weighted average over folds of the plug-in plus the
    held-out mean of the estimated influence function.  ``se`` is the root
    mean square deviation of the per-observation pseudo-outcomes around
    ``est``, divided by ``sqrt(n)``.  ``L=1`` fits and evaluates on the full
    sample.
    """
    cfg = cfg or LearnerConfig()
    graph, _ = prepare(graph)
    n = dataset.n
    if L == 1:
        if n < 2:
            raise ValueError("need at least 2 observations")
        everything = np.arange(n)
        pairs = [(everything, everything)]
    else:
        plan = make_folds(n, L, seed)
        all_idx = np.arange(n)
        pairs = [(np.setdiff1d(all_idx, idx, assume_unique=True), idx) for idx in plan.folds]

    def run(f):
        try:
            return _run_fold(graph, dataset, pairs[f][0], pairs[f][1], cfg, backend_factory)
        except Exception as exc:  # re-raised with the fold id attached
            raise FoldFailure(f, exc) from exc

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, range(len(pairs))))
    else:
        outputs = [run(f) for f in range(len(pairs))]

    pseudo = np.empty(n)
    f0_all = np.empty(n)
    fold_of = np.empty(n, dtype=int)
    total = 0.0
    diags = []
    for f, ((_, eval_idx), (psi, contrib, train_mean)) in enumerate(zip(pairs, outputs)):
        pseudo[eval_idx] = psi + contrib.f0
        f0_all[eval_idx] = contrib.f0
        fold_of[eval_idx] = f
        total += len(eval_idx) * contrib.value
        diags.append(FoldDiagnostics(f, len(eval_idx), psi, contrib.value - psi, train_mean))
    est = total / n
    sigma = float(np.sqrt(np.mean((pseudo - est) ** 2)))
    se = float(sigma / np.sqrt(n))
    half = Z_95 * se
    return EstimateResult(est, se, (est - half, est + half), n, L, seed, tuple(diags), pseudo, f0_all, fold_of)
