"""Efficient influence functions by reverse-mode differentiation over statistical primitives.

A parameter is written as a graph of primitives (conditional means,
variances, densities, pointwise maps, ...).  A forward pass computes the
plug-in value, a backward pass accumulates the influence function, and
:func:`estimate` combines both into a cross-fitted one-step estimator.
"""
from .estimator import Dataset, EstimateResult, backward_pass, estimate, forward_pass, make_folds
from .expr import parse_expr
from .graph import GraphBuilder, ParameterGraph, parse_graph, serialize, topo_order, validate
from .hilbert import NumericError, eval_element, zero_element
from .learners import ConfigurationError, LearnerConfig
from .oracle import (
    DiscreteDistribution, ExactBackend, eif_values, exact_eif, exact_forward, exact_psi, gateaux_check,
)
from .primitives import KernelBackend

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EstimateResult", "backward_pass", "estimate", "forward_pass", "make_folds",
    "parse_expr", "GraphBuilder", "ParameterGraph", "parse_graph", "serialize", "topo_order",
    "validate", "NumericError", "eval_element", "zero_element", "ConfigurationError",
    "LearnerConfig", "DiscreteDistribution", "ExactBackend", "eif_values", "exact_eif",
    "exact_forward", "exact_psi", "gateaux_check", "KernelBackend",
]
