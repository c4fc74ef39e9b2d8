"""Forward and backward routines for every primitive kind.

Each routine talks to the data through a *backend*: an object exposing the
training ``frame`` with probability ``weights`` and three fitting services
(``regress``, ``density``, ``propensity``) plus ``halves`` for the two-stage
variance recipes.  :class:`KernelBackend` fits kernel smoothers on a fold;
:class:`eif_forge.oracle.ExactBackend` enumerates a discrete distribution.
Because the backward routine reuses the objects fitted forward (kept in
``PrimitiveContext.cache``), each score contribution integrates to zero under
the fitted distribution whenever the backend is exact.

All density-ratio factors of the general adjoints are 1: the reference
distribution of every L2 space is the sampling distribution itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .expr import Col, DomainError, Num, Ref, bind, columns_of, diff, evaluate
from .graph import FN_Z, SCALAR, NodeSpec, Space, fn_x
from .hilbert import (
    AdjointBundle, Element, Frame, NumericError, combine, constant_function, coordinate,
    function, scalar,
)
from .learners import ConfigurationError, LearnerConfig, fit_density_model, fit_propensity, fit_regression

__all__ = [
    "KernelBackend", "PrimitiveContext", "forward_node", "backward_node",
    "adjoint_cond_mean", "adjoint_cond_variance", "adjoint_cond_covariance",
    "adjoint_density", "adjoint_deterministic", "adjoint_lift", "adjoint_fix_binary",
]


def _matrix(frame: Frame, columns) -> np.ndarray:
    return np.column_stack([frame.column(c) for c in columns]) if columns else np.zeros((frame.n, 0))


class KernelBackend:
    """Nuisance fits on one training fold with kernel smoothers."""

    def __init__(self, frame: Frame, cfg: LearnerConfig | None = None):
        if frame.n == 0:
            raise ConfigurationError("empty training fold")
        self.frame = frame
        self.cfg = cfg or LearnerConfig()
        self.weights = np.full(frame.n, 1.0 / frame.n)
        self._bandwidths: dict = {}

    def mean(self, values) -> float:
        return float(np.mean(values))

    def regress(self, values, given, origin=None, tune_key=None) -> Element:
        """Kernel regression of ``values`` on ``given``.

        With ``tune_key`` the bandwidth chosen on the first call is stored and
        reused by later calls with the same key, which makes repeated fits
        linear in ``values``.
        """
        given = tuple(given)
        bw = self._bandwidths.get(tune_key) if tune_key is not None else None
        model = fit_regression(_matrix(self.frame, given), values, self.cfg, given, bandwidth=bw)
        if tune_key is not None and model.constant is None:
            self._bandwidths.setdefault(tune_key, model.bandwidth)
        return function(fn_x(given), lambda fr: model.predict(_matrix(fr, given)), given, origin)

    def density(self, columns, given, origin=None) -> Element:
        cols = tuple(columns) + tuple(given)
        joint = fit_density_model(_matrix(self.frame, cols), self.cfg, cols)
        if not given:
            return function(FN_Z, lambda fr: joint(_matrix(fr, cols)), cols, origin)
        d = len(columns)

        def fn(fr):
            X = _matrix(fr, cols)
            log_marg = _marginal_log_density(joint, X, d)
            return np.exp(joint.log_density(X) - log_marg)

        return function(FN_Z, fn, cols, origin)

    def propensity(self, column, given, origin=None) -> Element:
        given = tuple(given)
        a = self.frame.column(column)
        if not np.any(a == 1):
            raise ConfigurationError(f"no rows with {column}=1 in the training fold")
        model = fit_propensity(_matrix(self.frame, given), a, self.cfg, given)
        if not given:
            return scalar(model.constant, origin)
        return function(fn_x(given), lambda fr: model.predict(_matrix(fr, given)), given, origin)

    def halves(self):
        idx = np.arange(self.frame.n)
        if self.frame.n < 2:
            return self, self
        return (KernelBackend(self.frame.take(idx[idx % 2 == 0]), self.cfg),
                KernelBackend(self.frame.take(idx[idx % 2 == 1]), self.cfg))


def _marginal_log_density(joint, X, d):
    """Log of the KDE over the trailing columns, sharing the joint's bandwidths."""
    from .learners import DensityModel

    marg = DensityModel(joint.columns[d:], joint.points[:, d:], joint.bandwidths[d:], joint.chunk)
    return marg.log_density(X[:, d:])


@dataclass
class PrimitiveContext:
    """Everything one node needs on one fold: backend, parent values, fitted pieces."""

    node: NodeSpec
    backend: object
    parents: Mapping[int, Element]
    spaces: Mapping[int, Space]
    cache: dict = field(default_factory=dict)
    output: Element | None = None

    @property
    def label(self) -> str:
        return self.node.label

    @property
    def space(self) -> Space:
        return self.spaces[self.node.id]

    def dependent(self, leaf) -> Element:
        if isinstance(leaf, Col):
            return coordinate(leaf.name)
        return self.parents[leaf.node]


def _view(e: Element, space: Space) -> Element:
    """The same function (sharing its frame memo) seen as an element of ``space``."""
    if e.is_scalar:
        return constant_function(space, e.value, e.origin) if space != SCALAR else e
    return function(space, lambda fr: fr.eval(e), e.reads, e.origin)


def _reads(*elements) -> frozenset:
    return frozenset().union(*(e.reads for e in elements))


def _check_w(ctx: PrimitiveContext, w: Element):
    if w.space != ctx.space:
        raise ValueError(f"node {ctx.label}: adjoint input lives in {w.space}, node output is {ctx.space}")


# --------------------------------------------------------------------------- forward

def _forward_mean(ctx):
    node, b = ctx.node, ctx.backend
    u = ctx.dependent(node.dependents[0])
    vals = b.frame.eval(u)
    ctx.cache["u"] = u
    if not node.given:
        return scalar(b.mean(vals), ctx.label)
    return b.regress(vals, node.given, ctx.label)


def _two_stage(ctx, us):
    """First-stage means of each ``u`` and the regression of the residual product."""
    node, b = ctx.node, ctx.backend
    if not node.given:
        if b.frame.n < 2:
            raise ConfigurationError(f"node {ctx.label}: variance needs at least 2 points")
        mus = [scalar(b.mean(b.frame.eval(u)), ctx.label) for u in us]
        prod = np.ones(b.frame.n)
        for u, mu in zip(us, mus):
            prod = prod * (b.frame.eval(u) - mu.value)
        return mus, scalar(b.mean(prod), ctx.label)
    first, second = b.halves()
    if first.frame.n == 0 or second.frame.n == 0:
        raise ConfigurationError(f"node {ctx.label}: fold too small to split")
    fitted: dict = {}
    for u in us:
        if u not in fitted:
            fitted[u] = first.regress(first.frame.eval(u), node.given, ctx.label)
    mus = [fitted[u] for u in us]
    prod = np.ones(second.frame.n)
    for u, mu in zip(us, mus):
        prod = prod * (second.frame.eval(u) - second.frame.eval(mu))
    return mus, second.regress(prod, node.given, ctx.label)


def _forward_variance(ctx):
    u = ctx.dependent(ctx.node.dependents[0])
    mus, h = _two_stage(ctx, [u, u])
    ctx.cache.update(u=u, mu=mus[0])
    return h


def _forward_covariance(ctx):
    us = [ctx.dependent(d) for d in ctx.node.dependents]
    mus, h = _two_stage(ctx, us)
    ctx.cache.update(us=us, mus=mus)
    return h


def _forward_density(ctx):
    node = ctx.node
    return ctx.backend.density(node.columns, node.given, ctx.label)


def _expr_fn(ctx, tree):
    parents = ctx.parents
    label = ctx.label

    def fn(fr):
        try:
            return evaluate(tree, fr.column, lambda j: fr.eval(parents[j]))
        except DomainError as exc:
            raise NumericError(str(exc), label) from exc

    return fn


def _forward_pointwise(ctx):
    tree = ctx.node.expr
    reads = columns_of(tree) | _reads(*(ctx.parents[p] for p in ctx.node.parents))
    return function(ctx.space, _expr_fn(ctx, tree), reads, ctx.label)


def _scalar_values(ctx):
    return {p: ctx.parents[p].value for p in ctx.node.parents}


def _bind(ctx, tree, values):
    try:
        return scalar(bind(tree, values), ctx.label)
    except DomainError as exc:
        raise NumericError(str(exc), ctx.label) from exc


def _forward_scalar_fn(ctx):
    return _bind(ctx, ctx.node.expr, _scalar_values(ctx))


def _forward_constant(ctx):
    tree = ctx.node.expr
    if not columns_of(tree):
        return _bind(ctx, tree, {})
    return function(FN_Z, _expr_fn(ctx, tree), columns_of(tree), ctx.label)


def _forward_lift(ctx):
    parent = ctx.parents[ctx.node.parents[0]]
    return function(FN_Z, lambda fr: fr.eval(parent), parent.reads, ctx.label)


def _forward_fix_binary(ctx):
    parent = ctx.parents[ctx.node.parents[0]]
    col = ctx.node.column
    if ctx.space == SCALAR:
        return scalar(Frame.from_record({col: 1.0}).eval(parent)[0], ctx.label)
    reads = parent.reads - {col}
    return function(ctx.space, lambda fr: fr.with_value(col, 1.0).eval(parent), reads, ctx.label)


_FORWARD = {
    "cond_mean": _forward_mean, "mean": _forward_mean, "cond_variance": _forward_variance,
    "cond_covariance": _forward_covariance, "density": _forward_density,
    "pointwise": _forward_pointwise, "scalar_fn": _forward_scalar_fn, "constant": _forward_constant,
    "lift": _forward_lift, "fix_binary": _forward_fix_binary,
}


def forward_node(ctx: PrimitiveContext) -> Element:
    """Estimate the node output from the backend's data; caches fitted pieces in ``ctx``."""
    ctx.output = _FORWARD[ctx.node.kind](ctx)
    if ctx.output.space != ctx.space:
        raise AssertionError(f"node {ctx.label}: produced {ctx.output.space}, expected {ctx.space}")
    return ctx.output


# --------------------------------------------------------------------------- backward

def adjoint_cond_mean(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Score ``(u - h) w`` and message ``w`` (lifted) to the dependent."""
    _check_w(ctx, w)
    u, h = ctx.cache["u"], ctx.output

    def f0(fr):
        return (fr.eval(u) - fr.eval(h)) * fr.eval(w)

    bundle_f0 = function(FN_Z, f0, _reads(u, h, w), ctx.label)
    leaf = ctx.node.dependents[0]
    msgs = {leaf.node: _view(w, FN_Z)} if isinstance(leaf, Ref) else {}
    return AdjointBundle(bundle_f0, msgs)


def adjoint_cond_variance(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Score ``((u - mu)^2 - h) w`` and message ``2 (u - mu) w``."""
    _check_w(ctx, w)
    u, mu, h = ctx.cache["u"], ctx.cache["mu"], ctx.output

    def f0(fr):
        r = fr.eval(u) - fr.eval(mu)
        return (r * r - fr.eval(h)) * fr.eval(w)

    bundle_f0 = function(FN_Z, f0, _reads(u, mu, h, w), ctx.label)
    leaf = ctx.node.dependents[0]
    msgs = {}
    if isinstance(leaf, Ref):
        msgs[leaf.node] = function(FN_Z, lambda fr: 2.0 * (fr.eval(u) - fr.eval(mu)) * fr.eval(w),
                                   _reads(u, mu, w), ctx.label)
    return AdjointBundle(bundle_f0, msgs)


def adjoint_cond_covariance(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Score ``w [(u1 - mu1)(u2 - mu2) - h]``; message to ``u_j`` is ``w (u_other - mu_other)``."""
    _check_w(ctx, w)
    (u1, u2), (m1, m2), h = ctx.cache["us"], ctx.cache["mus"], ctx.output

    def f0(fr):
        return ((fr.eval(u1) - fr.eval(m1)) * (fr.eval(u2) - fr.eval(m2)) - fr.eval(h)) * fr.eval(w)

    bundle_f0 = function(FN_Z, f0, _reads(u1, u2, m1, m2, h, w), ctx.label)
    terms: dict = {}
    for leaf, (uo, mo) in zip(ctx.node.dependents, ((u2, m2), (u1, m1))):
        if isinstance(leaf, Ref):
            msg = function(FN_Z, lambda fr, uo=uo, mo=mo: (fr.eval(uo) - fr.eval(mo)) * fr.eval(w),
                           _reads(uo, mo, w), ctx.label)
            terms.setdefault(leaf.node, []).append(msg)
    msgs = {p: combine(FN_Z, t, ctx.label) for p, t in terms.items()}
    return AdjointBundle(bundle_f0, msgs)


def adjoint_density(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Score ``w p - E[w p | given]`` (fold mean when unconditional); no messages."""
    _check_w(ctx, w)
    p, b = ctx.output, ctx.backend
    wp = function(FN_Z, lambda fr: fr.eval(w) * fr.eval(p), _reads(w, p), ctx.label)
    vals = b.frame.eval(wp)
    if ctx.node.given:
        centre = b.regress(vals, ctx.node.given, ctx.label, tune_key=(ctx.node.id, "density"))
    else:
        centre = scalar(b.mean(vals), ctx.label)
    f0 = function(FN_Z, lambda fr: fr.eval(wp) - fr.eval(centre), _reads(wp, centre), ctx.label)
    return AdjointBundle(f0, {})


def adjoint_deterministic(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Pointwise, scalar and constant maps: zero score, gradient messages."""
    _check_w(ctx, w)
    node = ctx.node
    if node.kind == "constant":
        return AdjointBundle(None, {})
    msgs = {}
    if node.kind == "scalar_fn":
        values = _scalar_values(ctx)
        for p in node.parents:
            d = diff(node.expr, p)
            msgs[p] = scalar(w.value * _bind(ctx, d, values).value, ctx.label)
        return AdjointBundle(None, msgs)
    for p in node.parents:
        d = diff(node.expr, p)
        space = ctx.spaces[p]
        if d == Num(0.0):
            continue
        grad = _expr_fn(ctx, d)
        msgs[p] = function(space, lambda fr, grad=grad: fr.eval(w) * grad(fr),
                           _reads(w, *(ctx.parents[q] for q in node.parents)) | columns_of(d), ctx.label)
    return AdjointBundle(None, msgs)


def adjoint_lift(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Message ``E[w(Z) | V]``; exact (no fitting) when ``w`` already depends on ``V`` only."""
    _check_w(ctx, w)
    parent = ctx.node.parents[0]
    space = ctx.spaces[parent]
    if w.reads <= space.varset:
        return AdjointBundle(None, {parent: _view(w, space)})
    b = ctx.backend
    given = tuple(sorted(space.varset))
    msg = b.regress(b.frame.eval(w), given, ctx.label, tune_key=(ctx.node.id, "lift"))
    return AdjointBundle(None, {parent: msg})


def adjoint_fix_binary(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Message ``a w(x) / pi(x)`` with ``pi(x)`` the fitted ``P(A=1 | x)``."""
    _check_w(ctx, w)
    parent = ctx.node.parents[0]
    col = ctx.node.column
    space = ctx.spaces[parent]
    rest = tuple(sorted(space.varset - {col}))
    pi = ctx.cache.get("pi")
    if pi is None:
        pi = ctx.backend.propensity(col, rest, ctx.label)
        ctx.cache["pi"] = pi
    msg = function(space, lambda fr: fr.column(col) * fr.eval(w) / fr.eval(pi),
                   _reads(w, pi) | {col}, ctx.label)
    return AdjointBundle(None, {parent: msg})


_BACKWARD = {
    "cond_mean": adjoint_cond_mean, "mean": adjoint_cond_mean,
    "cond_variance": adjoint_cond_variance, "cond_covariance": adjoint_cond_covariance,
    "density": adjoint_density, "pointwise": adjoint_deterministic,
    "scalar_fn": adjoint_deterministic, "constant": adjoint_deterministic,
    "lift": adjoint_lift, "fix_binary": adjoint_fix_binary,
}


def backward_node(ctx: PrimitiveContext, w: Element) -> AdjointBundle:
    """Dispatch the node's adjoint on ``w``; ``forward_node`` must have run on ``ctx``."""
    if ctx.output is None:
        raise RuntimeError(f"node {ctx.label}: backward called before forward")
    return _BACKWARD[ctx.node.kind](ctx, w)
