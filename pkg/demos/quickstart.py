"""Estimate the nonparametric R^2 and the expected density on simulated data.

    python3 demos/quickstart.py
"""
from eif_forge import estimate
from eif_forge.scenarios import expected_density_graph, generate_scenario, r2_graph


def main():
    data, truth = generate_scenario("r2", 2000, seed=7)
    res = estimate(r2_graph(), data, L=5, seed=0)
    print(f"R^2:              est={res.est:.4f} se={res.se:.4f} "
          f"ci=[{res.ci[0]:.4f}, {res.ci[1]:.4f}] truth={truth:.4f}")

    data, truth = generate_scenario("expected_density", 2000, seed=7)
    res = estimate(expected_density_graph(), data, L=5, seed=0)
    print(f"expected density: est={res.est:.4f} se={res.se:.4f} "
          f"ci=[{res.ci[0]:.4f}, {res.ci[1]:.4f}] truth={truth:.4f}")
    for d in res.diagnostics:
        print(f"  fold {d.fold}: plug-in {d.plug_in:.4f}, held-out mean of f0 {d.eval_mean_f0:+.4f}")


if __name__ == "__main__":
    main()
