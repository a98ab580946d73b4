"""Morrey classes of a few model charges.

A charge nu lies in the Morrey class M^q when

    |nu|(B(x, r)) <= C r**(n - n/q)

for all balls. The floated norm only tests balls whose radius is at most
the distance from the center to Gamma, plus the balls centered on Gamma.
Area measure is bounded for every q. A segment carries length, so it sits
in M^2, while a point mass is only in M^1. A distance weight delta**(-t)
moves a class q down to q n / (n + q t).

For each charge the demo prints the sampled norm at the declared class and
at a class just above it. Above the declared class the quotient grows as
the scan reaches smaller radii, which shows up as a divergence flag or a
large value. The last column is beta = (p - n/q)/(p - 1) for p = 1.5;
a class with beta <= 0 gives no Hölder estimate.
"""

import math

from holderlab.errors import LabError
from holderlab.geometry import unit_square
from holderlab.measures import (atom_charge, beta_exponent, distance_weight, lebesgue, morrey_norm,
                                segment_charge)

dom = unit_square()
p = 1.5
charges = {
    "lebesgue": lebesgue(),
    "segment": segment_charge((0.2, 0.3), (0.8, 0.6)),
    "weighted t=0.5": distance_weight(lebesgue(), 0.5, dom),
    "weighted segment t=0.3": distance_weight(segment_charge((0.2, 0.3), (0.8, 0.6)), 0.3, dom),
    "atom": atom_charge((0.5, 0.5), 1.0),
}

print(f"{'charge':>24} {'q':>7} {'norm':>10} {'divergent':>10} {'beta':>7}")
for name, nu in charges.items():
    for q in (nu.q, 2 * nu.q if math.isfinite(nu.q) else None):
        if q is None:
            continue
        rep = morrey_norm(nu, q, "floated", dom)
        try:
            beta = f"{beta_exponent(p, q):7.3f}"
        except LabError:
            beta = "none"
        print(f"{name:>24} {q:7.3f} {rep.value:10.4g} {str(rep.divergent):>10} {beta:>7}")
