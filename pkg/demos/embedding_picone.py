"""Embedding constant of a charge and the Picone bound.

For a nonnegative charge nu the best constant in

    (integral |phi|**p dnu)**(1/p) <= S * (integral |grad phi|**p)**(1/p)

is bracketed from two sides. Projected gradient ascent on the Rayleigh
quotient gives a lower bound. The Picone inequality applied with the
torsion function u of nu gives the upper bound (max u)**((p-1)/p). For
area measure on the unit square with p = 2, S**2 is the inverse of the
first Dirichlet eigenvalue 2 pi**2.

The second part checks the pointwise Picone inequality

    |grad phi|**p - |grad u|**(p-2) grad u . grad(|phi|**p / u**(p-1)) >= 0

on random positive u and random phi, printing the smallest margin found.
"""

import math

import numpy as np

from holderlab.analysis import embedding_bounds, picone_check
from holderlab.geometry import build_mesh, unit_square
from holderlab.measures import lebesgue, segment_charge
from holderlab.solver import ScalarField

dom = unit_square()
mesh = build_mesh(dom, 1 / 32)

print(f"{'charge':>10} {'p':>4} {'rayleigh lower':>15} {'picone upper':>13} {'gap':>7}")
for name, nu in (("lebesgue", lebesgue()), ("segment", segment_charge((0.2, 0.5), (0.8, 0.5)))):
    for p in (2.0, 1.5):
        rep = embedding_bounds(nu, mesh, p)
        print(f"{name:>10} {p:4.1f} {rep.rayleigh_lower:15.5f} {rep.picone_upper:13.5f} {rep.gap:7.3f}")
print(f"exact value for lebesgue, p = 2: {1 / math.sqrt(2 * math.pi ** 2):.5f}")

rng = np.random.default_rng(1)
small = build_mesh(dom, 1 / 16)
worst = math.inf
for _ in range(10):
    u = ScalarField(small, rng.uniform(0.05, 2.0, small.n_nodes))
    phi = rng.uniform(0.0, 2.0, small.n_nodes)
    phi[small.boundary] = 0.0
    r = picone_check(u, ScalarField(small, phi), rng.uniform(1.1, 2.0))
    worst = min(worst, r.min_margin / r.scale)
print(f"smallest Picone margin (relative) over 10 random pairs: {worst:.2e}")
