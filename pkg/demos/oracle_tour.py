"""Exact influence functions on a small discrete distribution.

Builds the R^2 graph by hand, prints its exact value and influence function
at every support point, and compares each value with a central difference
along the point-mass mixture path.

    python3 demos/oracle_tour.py
"""
import itertools

import numpy as np

from eif_forge import DiscreteDistribution, GraphBuilder, eif_values, exact_psi, gateaux_check


def r2_by_hand():
    b = GraphBuilder({"X1": "numeric", "X2": "numeric", "Y": "numeric"})
    var = b.variance(b.constant("Y"))
    fitted = b.lift(b.cond_mean(b.constant("Y"), given=["X1", "X2"]))
    mse = b.mean(b.pointwise(f"(Y - ${fitted})^2"))
    b.scalar_fn(f"1 - ${mse}/${var}")
    return b.build()


def main():
    support = []
    for x1, x2 in itertools.product((0.0, 1.0), (0.0, 2.0)):
        for y in (x1 - x2 + 0.5, 2 * x1 + x2 - 1.0):
            support.append({"X1": x1, "X2": x2, "Y": y})
    P = DiscreteDistribution(support, [0.05, 0.15, 0.1, 0.2, 0.12, 0.08, 0.18, 0.12])
    g = r2_by_hand()
    eif = eif_values(g, P)
    print(f"psi(P) = {exact_psi(g, P):.6f}, E_P[eif] = {P.probs @ eif:.1e}")
    print(f"{'X1':>4} {'X2':>4} {'Y':>6} {'eif':>11} {'central diff':>13} {'|diff|':>9}")
    for i, rec in enumerate(P.support):
        fd, value, err = gateaux_check(g, P, i, 1e-5, eif=eif)
        print(f"{rec['X1']:4.0f} {rec['X2']:4.0f} {rec['Y']:6.2f} {value:11.6f} {fd:13.6f} {err:9.1e}")
    print(f"max |diff| = {np.max([gateaux_check(g, P, i, 1e-5, eif=eif)[2] for i in range(8)]):.1e}")


if __name__ == "__main__":
    main()
