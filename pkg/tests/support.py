"""Shared fixtures-by-hand for the test suite."""

import numpy as np

from varimap.jets import LagrangianDensity


def random_polynomial_lagrangian(rng, m, n, terms=8):
    """Seeded polynomial density, degree <= 3 in phi and phi1 entries.

    A fixed quadratic kinetic part keeps the second-jet coefficients of
    the variational derivative away from zero, so detection tests have
    something to detect.
    """
    pool = [("phi", s) for s in range(m)]
    pool += [("phi1", s, i) for s in range(m) for i in range(n)]
    spec = []
    for _ in range(terms):
        deg = int(rng.integers(1, 4))
        picks = [pool[int(rng.integers(len(pool)))] for _ in range(deg)]
        spec.append((float(rng.normal()), picks))

    def factor(jet, key):
        if key[0] == "phi":
            return jet.phi[key[1]]
        return jet.phi1[key[1], key[2]]

    def fn(jet):
        total = 0.5 * sum(
            jet.phi1[s, i] * jet.phi1[s, i] for s in range(m) for i in range(n)
        )
        for coeff, picks in spec:
            term = coeff
            for key in picks:
                term = term * factor(jet, key)
            total = total + term
        return total

    return LagrangianDensity(m, n, fn, name=f"poly({terms} terms)")
