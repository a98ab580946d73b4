"""Torsion problem on the unit disk.

The p-torsion function solves

    -div(|grad u|**(p-2) grad u) = 1   in B(0, 1),      u = 0 on the circle,

and is radial with the closed form

    u(r) = (p-1)/p * (1/2)**(1/(p-1)) * (1 - r**(p/(p-1))).

This demo solves it on a sequence of meshes of the inscribed 256-gon for
p = 2 and p = 1.5, prints the maximum nodal error and its observed rate,
and records the normalized global bound constant, which should settle as
the mesh is refined.
"""

import math

import numpy as np

from holderlab.analysis import global_bound_constant
from holderlab.cli import radial_oracle
from holderlab.geometry import build_mesh, disk
from holderlab.measures import beta_exponent, lebesgue, morrey_norm
from holderlab.solver import EllipticOperator, solve_dirichlet

dom = disk((0.0, 0.0), 1.0, 256)
nu = lebesgue()
norm = morrey_norm(nu, math.inf, "floated", dom).value

for p in (2.0, 1.5):
    exact = radial_oracle(p, 1.0)
    beta = beta_exponent(p, math.inf)
    print(f"p = {p}   floated Morrey norm of Lebesgue = {norm:.4f}   beta = {beta:.3f}")
    print(f"{'h':>9} {'nodes':>7} {'max err':>11} {'rate':>6} {'C1':>8}")
    prev = None
    for h in (1 / 8, 1 / 16, 1 / 32):
        mesh = build_mesh(dom, h)
        u = solve_dirichlet(EllipticOperator(p), nu, mesh)
        r = np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1])
        err = np.abs(u.values - exact(r)).max()
        rate = "" if prev is None else f"{math.log2(prev / err):6.2f}"
        C1 = global_bound_constant(u, norm, p, beta, dom.diam)
        print(f"{h:9.5f} {mesh.n_nodes:7d} {err:11.3e} {rate:>6} {C1:8.4f}")
        prev = err
    print()
