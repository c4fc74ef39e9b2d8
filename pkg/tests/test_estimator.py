import numpy as np
import pytest

from eif_forge.estimator import (
    DataError, Dataset, FoldFailure, backward_pass, estimate, forward_pass, make_folds, one_step_fold,
)
from eif_forge.graph import FN_Z, GraphBuilder
from eif_forge.hilbert import Frame, NumericError, coordinate, function, zero_element
from eif_forge.oracle import DiscreteDistribution, ExactBackend, exact_psi
from eif_forge.primitives import KernelBackend
from eif_forge.scenarios import (
    expected_density_graph, generate_scenario, gformula_graph, mean_graph, r2_graph, R2_TRUTH,
    EXPECTED_DENSITY_TRUTH,
)

from conftest import r2_fixture


def test_make_folds_sizes_and_determinism():
    plan = make_folds(10, 5, seed=1)
    assert [len(f) for f in plan.folds] == [2] * 5
    assert sorted(len(f) for f in make_folds(11, 5).folds) == [2, 2, 2, 2, 3]
    again = make_folds(10, 5, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(plan.folds, again.folds))
    assert sorted(np.concatenate(plan.folds).tolist()) == list(range(10))
    with pytest.raises(ValueError):
        make_folds(9, 5)
    with pytest.raises(ValueError):
        make_folds(10, 0)


def test_forward_backward_mean():
    fold = KernelBackend(Frame({"Y": [1.0, 2.0, 3.0]}))
    st = forward_pass(mean_graph(), fold)
    assert st.psi == 2.0
    f0 = backward_pass(st)
    np.testing.assert_array_equal(Frame({"Y": [0.0, 5.0]}).eval(f0), [-2.0, 3.0])


def test_forward_constant_graph():
    b = GraphBuilder({"Y": "numeric"})
    b.constant("3")
    st = forward_pass(b.build(), KernelBackend(Frame({"Y": [1.0, 2.0]})))
    assert st.psi == 3.0
    assert Frame({"Y": [1.0]}).eval(backward_pass(st))[0] == 0.0


def test_forward_r2_large_sample():
    data, truth = generate_scenario("r2", 4000, seed=3)
    st = forward_pass(r2_graph(), KernelBackend(data.frame()))
    assert abs(st.psi - truth) <= 0.1


def test_one_step_fold_examples():
    fr = Frame({"Y": [1.0, 4.0]})
    assert one_step_fold(0.7, zero_element(FN_Z), fr).value == 0.7
    c = one_step_fold(1.0, coordinate("Y"), fr)
    assert c.value == 3.5
    np.testing.assert_array_equal(c.f0, [1.0, 4.0])
    with np.errstate(divide="ignore"):
        bad = function(FN_Z, lambda f: np.log(f.column("Y") - 1), ["Y"])
        with pytest.raises(NumericError):
            one_step_fold(0.0, bad, fr)


def test_exact_mean_recovery():
    y = np.random.default_rng(0).normal(size=100)
    res = estimate(mean_graph(), Dataset({"Y": y}), L=5, seed=4)
    assert abs(res.est - np.mean(y)) <= 1e-12
    res = estimate(mean_graph(), Dataset({"Y": y[:97]}), L=5, seed=4)
    assert abs(res.est - np.mean(y[:97])) <= 1e-12
    res = estimate(mean_graph(), Dataset({"Y": y}), L=1)
    assert abs(res.est - np.mean(y)) <= 1e-12


def test_constant_parameter_estimate():
    b = GraphBuilder({"Y": "numeric"})
    b.constant("3")
    res = estimate(b.build(), Dataset({"Y": np.arange(20.0)}))
    assert res.est == 3.0 and res.se == 0.0


def test_mean_standard_error():
    y = np.random.default_rng(1).normal(size=1000)
    res = estimate(mean_graph(), Dataset({"Y": y}))
    assert abs(res.se - 1 / np.sqrt(1000)) <= 0.15 / np.sqrt(1000)


def test_result_shape_and_interval():
    y = np.random.default_rng(2).exponential(size=50)
    res = estimate(mean_graph(), Dataset({"Y": y}))
    d = res.to_dict()
    assert set(d) >= {"est", "se", "ci"} and len(d["ci"]) == 2
    assert isinstance(d["se"], float)
    lo, hi = res.ci
    assert hi - lo == pytest.approx(3.92 * res.se, rel=1e-12, abs=0)
    assert (lo + hi) / 2 == pytest.approx(res.est, abs=1e-14)


def test_decomposition_by_fold():
    data, _ = generate_scenario("r2", 300, seed=5)
    res = estimate(r2_graph(), data, L=3, seed=9)
    weighted = sum(d.size * (d.plug_in + d.eval_mean_f0) for d in res.diagnostics) / res.n
    assert abs(res.est - weighted) <= 1e-12
    np.testing.assert_allclose(res.pseudo[res.fold_of == 0] - res.diagnostics[0].plug_in,
                               res.f0[res.fold_of == 0], atol=1e-15)


def test_determinism_and_thread_parity():
    data, _ = generate_scenario("gformula", 400, seed=6)
    a = estimate(gformula_graph(), data, seed=2)
    b = estimate(gformula_graph(), data, seed=2)
    c = estimate(gformula_graph(), data, seed=2, threads=4)
    for other in (b, c):
        assert other.est == a.est and other.se == a.se and other.ci == a.ci
        assert np.array_equal(other.pseudo, a.pseudo)


def test_oracle_consistency():
    P = r2_fixture()
    frame = P.frame()
    st = forward_pass(r2_graph(), ExactBackend(P))
    c = one_step_fold(st.psi, backward_pass(st), frame, weights=P.probs)
    assert abs(c.value - exact_psi(r2_graph(), P)) <= 1e-12
    # with a uniform support the unweighted L=1 estimator is exact as well
    U = DiscreteDistribution(P.support, np.full(len(P.support), 1 / len(P.support)))
    data = Dataset({k: frame.column(k) for k in P.columns})
    res = estimate(r2_graph(), data, L=1, backend_factory=lambda fr, cfg: ExactBackend(
        DiscreteDistribution([{k: fr.column(k)[i] for k in P.columns} for i in range(fr.n)],
                             np.full(fr.n, 1 / fr.n))))
    assert abs(res.est - exact_psi(r2_graph(), U)) <= 1e-12


def test_expected_density_large_sample():
    data, truth = generate_scenario("expected_density", 4000, seed=11)
    assert truth == EXPECTED_DENSITY_TRUTH
    res = estimate(expected_density_graph(), data)
    assert abs(res.est - truth) <= 3 * res.se


def test_fold_failure_reports_fold():
    # one value of A equals 1 only in a single record: some training fold lacks treated rows
    n = 20
    x = np.linspace(0, 1, n)
    a = np.zeros(n)
    a[0] = 1.0
    y = x.copy()
    b = GraphBuilder({"X": "numeric", "A": "binary", "Y": "numeric"})
    b.mean(b.lift(b.cond_mean("Y", given=["X"], fixed=["A"])))
    with pytest.raises(FoldFailure) as info:
        estimate(b.build(), Dataset({"X": x, "A": a, "Y": y}, b.build().schema), L=5, seed=0)
    plan = make_folds(n, 5, 0)
    holder = next(f for f, idx in enumerate(plan.folds) if 0 in idx)
    assert info.value.fold == holder


def test_dataset_validation():
    with pytest.raises(DataError, match="Y"):
        Dataset({"Y": [1.0, np.nan]})
    with pytest.raises(DataError):
        Dataset({"Y": [1.0], "X": [1.0, 2.0]})
    from eif_forge.graph import ColumnSpec
    with pytest.raises(DataError, match="A"):
        Dataset({"A": [0.0, 2.0]}, (ColumnSpec("A", "binary"),))
    with pytest.raises(DataError, match="Z"):
        Dataset({"A": [0.0, 1.0]}, (ColumnSpec("Z"),))


def test_r2_truth_constant():
    assert R2_TRUTH == pytest.approx((625 / 81) * (1 / 5 - 1 / 9) / ((625 / 81) * (1 / 5 - 1 / 9) + 1), abs=1e-15)
