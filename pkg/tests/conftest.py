import itertools

import numpy as np
import pytest

from eif_forge.oracle import DiscreteDistribution


def r2_fixture() -> DiscreteDistribution:
    # 8 points, two covariates, every covariate cell shared by two outcomes
    support = []
    for x1, x2 in itertools.product((0.0, 1.0), (0.0, 2.0)):
        for y in (x1 - x2 + 0.5, 2 * x1 + x2 - 1.0):
            support.append({"X1": x1, "X2": x2, "Y": y})
    probs = np.array([0.05, 0.15, 0.1, 0.2, 0.12, 0.08, 0.18, 0.12])
    return DiscreteDistribution(support, probs)


def density_fixture() -> DiscreteDistribution:
    ys = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0]
    probs = np.array([0.1, 0.25, 0.05, 0.3, 0.2, 0.1])
    return DiscreteDistribution([{"Y": y} for y in ys], probs)


def cond_cov_fixture() -> DiscreteDistribution:
    support, probs = [], []
    rng = np.random.default_rng(7)
    for x in (0.0, 1.0, 2.0):
        for a, y in ((0.0, 1.0), (1.0, 3.0), (1.0, -1.0)):
            support.append({"X": x, "A": a + 0.5 * x, "Y": y + x})
    probs = rng.dirichlet(np.full(len(support), 3.0))
    return DiscreteDistribution(support, probs)


def gformula_randomized_fixture() -> DiscreteDistribution:
    """Two periods, treatments assigned by fair coins at each period."""
    support, probs = [], []
    for x0, a0, x1, a1, y in itertools.product((0, 1), repeat=5):
        px1 = 0.4 + 0.2 * a0 + 0.1 * x0
        py = 0.3 + 0.2 * x0 + 0.2 * x1 + 0.2 * a1
        mass = 0.5 * 0.5 * (px1 if x1 else 1 - px1) * 0.5 * (py if y else 1 - py)
        support.append({"X0": x0, "A0": a0, "X1": x1, "A1": a1, "Y": y})
        probs.append(mass)
    return DiscreteDistribution(support, np.array(probs))


@pytest.fixture
def r2_dist():
    return r2_fixture()


@pytest.fixture
def density_dist():
    return density_fixture()


@pytest.fixture
def cond_cov_dist():
    return cond_cov_fixture()


@pytest.fixture
def gformula_rand_dist():
    return gformula_randomized_fixture()


def enumerate_group_mean(dist, values, columns):
    """Reference conditional mean by brute-force enumeration (independent of the backend)."""
    out = np.empty(len(dist.support))
    for i, r in enumerate(dist.support):
        same = [j for j, s in enumerate(dist.support) if all(s[c] == r[c] for c in columns)]
        w = dist.probs[same]
        out[i] = np.dot(w, values[same]) / w.sum()
    return out


RANDOM_SCHEMA = {"X": "numeric", "A": "binary", "Y": "numeric"}


def random_distribution(rng) -> DiscreteDistribution:
    """Full product support over X in {0,1,2}, A in {0,1}, Y on three random levels."""
    ys = np.sort(rng.normal(size=3))
    support = [{"X": x, "A": a, "Y": y} for x in (0.0, 1.0, 2.0) for a in (0.0, 1.0) for y in ys]
    probs = rng.dirichlet(np.full(len(support), 2.0))
    probs = probs + 1e-3
    return DiscreteDistribution(support, probs / probs.sum())


def random_graph(rng):
    """A small valid graph mixing every primitive kind, drawn at random."""
    from eif_forge.graph import GraphBuilder

    b = GraphBuilder(RANDOM_SCHEMA)
    funcs = [b.constant("Y")]
    scalars = []
    for _ in range(rng.integers(1, 5)):
        src = funcs[rng.integers(len(funcs))]
        kind = rng.choice(["mean_x", "var_x", "cov_x", "pointwise", "fix", "density", "scalar_mean", "var"])
        if kind == "mean_x":
            funcs.append(b.lift(b.cond_mean(src, given=["X"])))
        elif kind == "var_x":
            funcs.append(b.lift(b.variance(src, given=["X", "A"])))
        elif kind == "cov_x":
            funcs.append(b.lift(b.covariance("A", src, given=["X"])))
        elif kind == "pointwise":
            funcs.append(b.pointwise(f"${src} * (X + 1) - exp(${src} / 4)"))
        elif kind == "fix":
            funcs.append(b.lift(b.cond_mean(src, given=["X"], fixed=["A"])))
        elif kind == "density":
            funcs.append(b.density(["Y"], given=[["X"], []][rng.integers(2)]))
        elif kind == "scalar_mean":
            scalars.append(b.mean(src))
        else:
            scalars.append(b.variance(src))
    last = b.mean(funcs[-1])
    if scalars:
        terms = " + ".join(f"${s}^2" for s in scalars)
        b.scalar_fn(f"${last} * ({terms}) + log(1 + ${scalars[0]}^2)")
    return b.build()


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
