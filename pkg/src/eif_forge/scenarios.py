"""Ready-made parameter graphs, simulation designs and the Monte Carlo harness."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .estimator import Dataset, estimate
from .graph import GraphBuilder, ParameterGraph
from .learners import LearnerConfig
from .oracle import DiscreteDistribution, eif_values, exact_psi

__all__ = [
    "mean_graph", "r2_graph", "expected_density_graph", "expected_cond_cov_graph", "gformula_graph",
    "Scenario", "SCENARIOS", "generate_scenario", "gformula_distribution", "run_simulate",
    "summarize_replicates",
]


# --------------------------------------------------------------------------- graphs

def mean_graph(column: str = "Y") -> ParameterGraph:
    b = GraphBuilder({column: "numeric"})
    b.mean(column)
    return b.build()


def r2_graph(covariates=("X1", "X2"), outcome: str = "Y") -> ParameterGraph:
    """``1 - E[(Y - E[Y|X])^2] / Var(Y)`` as eight primitives."""
    schema = {c: "numeric" for c in covariates}
    schema[outcome] = "numeric"
    b = GraphBuilder(schema)
    y1 = b.constant(outcome)
    var = b.variance(y1)
    y3 = b.constant(outcome)
    mu = b.cond_mean(y3, given=covariates)
    lifted = b.lift(mu)
    sq = b.pointwise(f"({outcome} - ${lifted})^2")
    mse = b.mean(sq)
    b.scalar_fn(f"1 - ${mse}/${var}")
    return b.build()


def expected_density_graph(columns=("Y",)) -> ParameterGraph:
    """``E[p(Z)]``, the integral of the squared density."""
    b = GraphBuilder({c: "numeric" for c in columns})
    b.mean(b.density(list(columns)))
    return b.build()


def expected_cond_cov_graph(a: str = "A", y: str = "Y", given=("X",)) -> ParameterGraph:
    """``E[Cov(A, Y | X)]``."""
    schema = {c: "numeric" for c in given}
    schema[a] = "numeric"
    schema[y] = "numeric"
    b = GraphBuilder(schema)
    b.mean(b.lift(b.covariance(a, y, given=given)))
    return b.build()


def gformula_graph(periods: int = 2, outcome: str = "Y") -> ParameterGraph:
    """Sequential regression for the mean outcome under treatment 1 at every period.

    Columns are ``X0, A0, ..., X{T-1}, A{T-1}, Y`` with binary treatments.
    """
    schema = {}
    for t in range(periods):
        schema[f"X{t}"] = "binary"
        schema[f"A{t}"] = "binary"
    schema[outcome] = "binary"
    b = GraphBuilder(schema)
    target = outcome
    for t in range(periods - 1, -1, -1):
        history = []
        for s in range(t):
            history += [f"X{s}", f"A{s}"]
        history.append(f"X{t}")
        node = b.cond_mean(target, given=history, fixed=[f"A{t}"])
        target = b.lift(node)
    b.mean(target)
    return b.build()


# --------------------------------------------------------------------------- designs

def _clip(p):
    return np.clip(p, 1e-6, 1 - 1e-6)


def _gformula_probs(x0, a0, x1, a1):
    return {
        "X0": 0.5,
        "A0": _clip(0.3 + 0.4 * x0),
        "X1": _clip(0.2 + 0.3 * a0 + 0.2 * x0),
        "A1": _clip(0.3 + 0.4 * x1),
        "Y": _clip(0.2 + 0.2 * x0 + 0.2 * x1 + 0.2 * a1),
    }


def gformula_distribution() -> DiscreteDistribution:
    """The two-period design as an exact 32-point distribution."""
    support, probs = [], []
    for x0, a0, x1, a1, y in itertools.product((0, 1), repeat=5):
        p = _gformula_probs(x0, a0, x1, a1)
        mass = 1.0
        for name, value in (("X0", x0), ("A0", a0), ("X1", x1), ("A1", a1), ("Y", y)):
            mass *= p[name] if value == 1 else 1 - p[name]
        support.append({"X0": x0, "A0": a0, "X1": x1, "A1": a1, "Y": y})
        probs.append(mass)
    probs = np.array(probs)
    return DiscreteDistribution(support, probs / probs.sum())


def _sample_gformula(n, rng):
    x0 = (rng.random(n) < 0.5).astype(float)
    a0 = (rng.random(n) < _clip(0.3 + 0.4 * x0)).astype(float)
    x1 = (rng.random(n) < _clip(0.2 + 0.3 * a0 + 0.2 * x0)).astype(float)
    a1 = (rng.random(n) < _clip(0.3 + 0.4 * x1)).astype(float)
    y = (rng.random(n) < _clip(0.2 + 0.2 * x0 + 0.2 * x1 + 0.2 * a1)).astype(float)
    return {"X0": x0, "A0": a0, "X1": x1, "A1": a1, "Y": y}


def _sample_density(n, rng):
    return {"Y": rng.beta(3.0, 5.0, n)}


def _sample_r2(n, rng):
    x1 = rng.uniform(-1, 1, n)
    x2 = rng.uniform(-1, 1, n)
    return {"X1": x1, "X2": x2, "Y": 25 * x1 ** 2 / 9 + rng.standard_normal(n)}


# Var(25 X^2 / 9) for X ~ Unif[-1, 1]: (25/9)^2 (E X^4 - (E X^2)^2) = (625/81)(1/5 - 1/9)
_R2_SIGNAL = (625.0 / 81.0) * (1.0 / 5.0 - 1.0 / 9.0)
R2_TRUTH = _R2_SIGNAL / (_R2_SIGNAL + 1.0)
# integral of the squared Beta(3, 5) density: B(5, 9) / B(3, 5)^2 = 105^2 / 6435
EXPECTED_DENSITY_TRUTH = 105.0 ** 2 / 6435.0


def _r2_eif(cols):
    x1, y = cols["X1"], cols["Y"]
    mu = 25 * x1 ** 2 / 9
    ey = 25.0 / 27.0
    var = _R2_SIGNAL + 1.0
    gamma = 1.0
    return ((y - ey) ** 2 - var) * gamma / var ** 2 - ((y - mu) ** 2 - gamma) / var


def _density_eif(cols):
    return 2.0 * (stats.beta.pdf(cols["Y"], 3.0, 5.0) - EXPECTED_DENSITY_TRUTH)


@dataclass(frozen=True)
class Scenario:
    name: str
    graph: ParameterGraph
    truth: float
    sampler: Callable
    eif_sd: Callable  # () -> float, the sd of the true influence function

    def generate(self, n: int, seed: int) -> Dataset:
        cols = self.sampler(n, np.random.default_rng(seed))
        return Dataset(cols, self.graph.schema)


def _mc_sd(sampler, eif):
    def sd():
        cols = sampler(100_000, np.random.default_rng(20240601))
        return float(np.std(eif(cols)))
    return sd


def _gformula_sd():
    dist = gformula_distribution()
    vals = eif_values(gformula_graph(), dist)
    return float(math.sqrt(np.dot(dist.probs, vals ** 2)))


def _build_scenarios() -> dict:
    gdist = gformula_distribution()
    return {
        "expected_density": Scenario("expected_density", expected_density_graph(), EXPECTED_DENSITY_TRUTH,
                                     _sample_density, _mc_sd(_sample_density, _density_eif)),
        "r2": Scenario("r2", r2_graph(), R2_TRUTH, _sample_r2, _mc_sd(_sample_r2, _r2_eif)),
        "gformula": Scenario("gformula", gformula_graph(), exact_psi(gformula_graph(), gdist),
                             _sample_gformula, _gformula_sd),
    }


SCENARIOS = _build_scenarios()


def generate_scenario(name: str, n: int, seed: int) -> tuple[Dataset, float]:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    sc = SCENARIOS[name]
    return sc.generate(n, seed), sc.truth


# --------------------------------------------------------------------------- harness

def summarize_replicates(ests, los, his, truth, n, sigma) -> dict:
    """Coverage, relative width, relative variance and bias^2/MSE of replicate results."""
    ests, los, his = (np.asarray(a, dtype=float) for a in (ests, los, his))
    hits = (los <= truth) & (truth <= his)
    err = ests - truth
    mse = float(np.mean(err ** 2))
    bias = float(np.mean(err))
    return {
        "coverage": float(np.mean(hits)),
        "rel_width": float(math.sqrt(n) * np.mean(his - los) / (2 * 1.96 * sigma)),
        "rel_variance": float(n * np.var(ests, ddof=1) / sigma ** 2) if len(ests) > 1 else float("nan"),
        "bias2_mse": bias ** 2 / mse if mse > 0 else 0.0,
        "mean_est": float(np.mean(ests)),
    }


def run_simulate(scenario: str, n: int, reps: int, seed: int = 0, folds: int = 5,
                 cfg: LearnerConfig | None = None, threads: int = 1) -> dict:
    """Replicate ``estimate`` on fresh draws with seeds ``seed+1 .. seed+reps``.

    Replicates that raise are counted under ``failures`` and excluded from
    the metrics.
    """
    sc = SCENARIOS[scenario]
    sigma = sc.eif_sd()

    def one(r):
        data = sc.generate(n, seed + r)
        try:
            res = estimate(sc.graph, data, folds, seed + r, cfg)
        except Exception as exc:
            return r, None, f"{type(exc).__name__}: {exc}"
        return r, res, None

    indices = range(1, reps + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, indices))
    else:
        rows = [one(r) for r in indices]
    ok = [res for _, res, err in rows if res is not None]
    failures = [{"replicate": r, "error": err} for r, _, err in rows if err is not None]
    report = {"scenario": scenario, "n": n, "reps": reps, "completed": len(ok), "failures": len(failures),
              "truth": sc.truth, "sigma_eif": sigma}
    if ok:
        report.update(summarize_replicates([r.est for r in ok], [r.ci[0] for r in ok],
                                           [r.ci[1] for r in ok], sc.truth, n, sigma))
    report["failure_details"] = failures
    return report
