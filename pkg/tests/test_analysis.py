import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import disk_mesh, square_mesh
from holderlab.analysis import (boundary_oscillation, embedding_bounds, holder_seminorm, necessity_check,
                                necessity_q, oscillation_decay, picone_check, wolff_energy_bound,
                                wolff_potential)
from holderlab.errors import LabError
from holderlab.geometry import build_mesh, disk, l_shape, unit_square
from holderlab.measures import atom_charge, lebesgue, segment_charge, zero_charge
from holderlab.solver import EllipticOperator, ScalarField, SolveConfig, solve_dirichlet

SQ = unit_square()


def nodal(mesh, f):
    return ScalarField(mesh, f(mesh.nodes))


# ------------------------------------------------------------- Holder


def test_holder_linear():
    rep = holder_seminorm(nodal(square_mesh(1 / 8), lambda x: x[:, 0]), 1.0)
    assert rep.seminorm == pytest.approx(1.0, rel=1e-12)
    assert rep.exact


def test_holder_sqrt_attained_against_axis():
    rep = holder_seminorm(nodal(square_mesh(1 / 8), lambda x: np.sqrt(x[:, 0])), 0.5)
    assert rep.seminorm == pytest.approx(1.0, rel=1e-12)
    assert min(rep.points[0][0], rep.points[1][0]) == 0.0


def test_holder_torsion_on_disk():
    # node pairs see secants, (2 - h) / 4 next to the boundary
    rep = holder_seminorm(nodal(disk_mesh(0.05), lambda x: (1 - (x ** 2).sum(1)) / 4), 1.0)
    assert 0.5 * (1 - 0.05) <= rep.seminorm <= 0.5


def test_holder_witness_and_scaling():
    u = solve_dirichlet(EllipticOperator(1.5), lebesgue(), square_mesh(1 / 8))
    rep = holder_seminorm(u, 0.7)
    i, j = rep.witness
    x = u.mesh.nodes
    again = abs(u.values[i] - u.values[j]) / np.hypot(*(x[i] - x[j])) ** 0.7
    assert again == rep.seminorm
    assert holder_seminorm(3.0 * u, 0.7).seminorm == pytest.approx(3 * rep.seminorm, rel=1e-14)


def test_holder_sampled_path():
    field = nodal(square_mesh(1 / 16), lambda x: x[:, 0] + 0.5 * x[:, 1] ** 2)
    exact = holder_seminorm(field, 1.0)
    sampled = holder_seminorm(field, 1.0, pair_budget=2000)
    assert not sampled.exact and sampled.pairs < exact.pairs
    assert sampled.seminorm <= exact.seminorm
    assert sampled.seminorm == pytest.approx(exact.seminorm, rel=0.05)


def test_holder_bad_exponent():
    with pytest.raises(LabError) as err:
        holder_seminorm(nodal(square_mesh(1 / 4), lambda x: x[:, 0]), 1.5)
    assert err.value.code == "bad-exponent"


# ------------------------------------------------------------- oscillation

RADII = [0.4, 0.2, 0.1, 0.05]


def test_oscillation_linear():
    tab = oscillation_decay(nodal(square_mesh(1 / 32), lambda x: x[:, 0]), (0.5, 0.5), [0.45, 0.2, 0.1, 0.05])
    assert tab.alpha0 == pytest.approx(1.0, abs=0.05)
    h = 1 / 32
    assert np.all(tab.osc <= 2 * tab.radii) and np.all(tab.osc >= 2 * tab.radii - 2 * h)


def test_oscillation_constant_is_flat():
    tab = oscillation_decay(nodal(square_mesh(1 / 32), lambda x: np.full(len(x), 2.0)), (0.5, 0.5), RADII)
    assert tab.flat and np.all(tab.osc == 0)


def test_oscillation_torsion_center():
    tab = oscillation_decay(nodal(disk_mesh(0.05), lambda x: (1 - (x ** 2).sum(1)) / 4), (0.0, 0.0),
                            [0.8, 0.4, 0.2])
    assert 0.9 <= tab.alpha0 <= 2.1


def test_oscillation_errors():
    f = nodal(square_mesh(1 / 16), lambda x: x[:, 0])
    with pytest.raises(LabError) as err:
        oscillation_decay(f, (0.5, 0.5), [0.6, 0.3, 0.1])
    assert err.value.code == "bad-ball"
    with pytest.raises(LabError) as err:
        oscillation_decay(f, (0.5, 0.5), [0.04, 0.02, 0.01])
    assert err.value.code == "under-resolved"


def test_boundary_oscillation_flat_edge():
    u = solve_dirichlet(EllipticOperator(2.0), lebesgue(), square_mesh(1 / 64))
    tab = boundary_oscillation(u, (0.0, 0.5), [0.2, 0.1, 0.05], SQ)
    assert np.all(np.diff(tab.osc) < 0)
    beta1 = 1.0  # the torsion function is Lipschitz up to a flat edge
    assert tab.alpha0 >= beta1 - 0.2
    zero = boundary_oscillation(u * 0.0, (0.0, 0.5), RADII, SQ)
    assert zero.flat and np.all(zero.osc == 0)
    with pytest.raises(LabError) as err:
        boundary_oscillation(u, (0.5, 0.5), RADII, SQ)
    assert err.value.code == "bad-center"


def test_boundary_oscillation_corner_below_flat():
    dom = l_shape()
    u = solve_dirichlet(EllipticOperator(2.0), lebesgue(), build_mesh(dom, 1 / 64))
    radii = [0.2, 0.1, 0.05]
    corner = boundary_oscillation(u, (0.5, 0.5), radii, dom)
    flat = boundary_oscillation(u, (0.25, 0.0), radii, dom)
    assert corner.alpha0 <= flat.alpha0


# ------------------------------------------------------------- Wolff


def test_wolff_atom_closed_form():
    rep = wolff_potential(atom_charge((0.0, 0.0)), (0.25, 0.0), 2.0, 1.0, domain=disk())
    assert rep.value == pytest.approx(math.log(4), rel=1e-10)
    assert not rep.divergent


def test_wolff_zero_and_divergent():
    assert wolff_potential(zero_charge(), (0.5, 0.5), 1.5, 1.0, domain=SQ).value == 0.0
    rep = wolff_potential(atom_charge((0.5, 0.5)), (0.5, 0.5), 2.0, 1.0, domain=SQ)
    assert rep.flag == "divergent-at-atom"


def test_wolff_levels_monotone_and_cauchy():
    nu = lebesgue() + segment_charge((0.2, 0.2), (0.8, 0.4))
    values = [wolff_potential(nu, (0.4, 0.5), 1.5, 2.0, levels=L, domain=SQ).value for L in (5, 10, 15, 20)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    diffs = np.diff(values)
    assert np.all(diffs[1:] < diffs[:-1])


def test_wolff_lebesgue_closed_form():
    # p = 2, interior point: mass pi r**2 for r below the distance to the boundary
    x, R = (0.5, 0.5), 0.4
    rep = wolff_potential(lebesgue(), x, 2.0, R, levels=30, domain=SQ)
    assert rep.value == pytest.approx(math.pi * R ** 2 / 2, rel=1e-10)


def test_wolff_errors():
    with pytest.raises(LabError):
        wolff_potential(lebesgue(), (0.5, 0.5), 2.5, 1.0, domain=SQ)
    with pytest.raises(LabError):
        wolff_potential(lebesgue(), (0.5, 0.5), 2.0, 1.0)


def test_wolff_energy_homogeneity():
    mesh = square_mesh(1 / 4)
    a = wolff_energy_bound(lebesgue(), 2.0, math.inf, SQ, mesh, levels=12)
    b = wolff_energy_bound(lebesgue(0.5), 2.0, math.inf, SQ, mesh, levels=12)
    assert b.lhs == pytest.approx(0.25 * a.lhs, rel=1e-12)
    assert b.constant == pytest.approx(a.constant, rel=1e-9)


def test_wolff_energy_refinement_and_segment():
    a = wolff_energy_bound(lebesgue(), 2.0, math.inf, SQ, square_mesh(1 / 4), levels=12)
    b = wolff_energy_bound(lebesgue(), 2.0, math.inf, SQ, square_mesh(1 / 8), levels=12)
    assert 0.5 <= a.constant / b.constant <= 2.0
    seg = wolff_energy_bound(segment_charge((0.2, 0.3), (0.8, 0.6)), 2.0, 2.0, SQ, square_mesh(1 / 8), levels=12)
    assert math.isfinite(seg.lhs) and seg.lhs > 0
    with pytest.raises(LabError):
        wolff_energy_bound(-1.0 * lebesgue(), 2.0, math.inf, SQ, square_mesh(1 / 4))


# ------------------------------------------------------------- Picone


def test_picone_equality_case():
    mesh = square_mesh(1 / 8)
    u = solve_dirichlet(EllipticOperator(1.5), lebesgue(), mesh) + 1.0
    rep = picone_check(u, u, 1.5)
    assert np.abs(rep.margins).max() <= 1e-12 * rep.scale


def test_picone_constant_phi_sign():
    mesh = square_mesh(1 / 8)
    u = nodal(mesh, lambda x: 1 + x[:, 0] + 2 * x[:, 1])
    phi = nodal(mesh, lambda x: np.full(len(x), 0.7))
    rep = picone_check(u, phi, 1.5)
    assert np.all(rep.margins >= 0)


def test_picone_random_pairs():
    mesh = square_mesh(1 / 8)
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = rng.uniform(1.1, 2.0)
        u = ScalarField(mesh, rng.uniform(0.1, 2.0, mesh.n_nodes))
        phi = ScalarField(mesh, rng.uniform(0.0, 2.0, mesh.n_nodes))
        rep = picone_check(u, phi, p)
        assert rep.min_margin >= -1e-8 * rep.scale


def test_picone_errors():
    mesh = square_mesh(1 / 8)
    u = nodal(mesh, lambda x: x[:, 0])
    phi = nodal(mesh, lambda x: np.ones(len(x)))
    with pytest.raises(LabError) as err:
        picone_check(u, phi, 2.0)
    assert err.value.code == "picone-floor"
    with pytest.raises(LabError) as err:
        picone_check(u + 1, nodal(square_mesh(1 / 4), lambda x: x[:, 0]), 2.0)
    assert err.value.code == "mesh-mismatch"


# ------------------------------------------------------------- embedding


def test_embedding_zero_charge():
    rep = embedding_bounds(zero_charge(), square_mesh(1 / 8), 2.0)
    assert rep.rayleigh_lower == 0.0 and rep.picone_upper == 0.0


def test_embedding_lebesgue_square():
    rep = embedding_bounds(lebesgue(), square_mesh(1 / 16), 2.0, trials=2)
    assert rep.rayleigh_lower == pytest.approx(1 / math.sqrt(2 * math.pi ** 2), rel=0.02)
    assert rep.picone_upper == pytest.approx(0.2715, rel=0.02)
    assert rep.rayleigh_lower <= rep.picone_upper
    for hist in rep.history:
        assert all(b > a for a, b in zip(hist, hist[1:]))


# ------------------------------------------------------------- necessity


def test_necessity_q_values():
    assert necessity_q(1, 2) == Fraction(2)
    assert necessity_q(Fraction(1, 4), 2) == Fraction(8, 7)
    assert necessity_q(0.25, 1.5) == Fraction(16, 15)
    assert isinstance(necessity_q(math.sqrt(0.3), 1.5), float)
    with pytest.raises(LabError) as err:
        necessity_q(2, 2)
    assert err.value.code == "q-undefined"


def test_necessity_check_torsion():
    mesh = square_mesh(1 / 8)
    u = solve_dirichlet(EllipticOperator(2.0), lebesgue(), mesh)
    rep = necessity_check(u, lebesgue(), 1.0, 2.0, SQ)
    assert rep.q == 2
    assert math.isfinite(rep.lhs) and rep.lhs > 0
    assert math.isfinite(rep.seminorm) and rep.seminorm > 0
    zero = necessity_check(u, zero_charge(), 1.0, 2.0, SQ)
    assert zero.lhs == 0.0


def test_necessity_constant_scale_invariant():
    mesh = square_mesh(1 / 8)
    p, beta, t = 1.5, 0.5, 4.0
    cfg = SolveConfig()
    u = solve_dirichlet(EllipticOperator(p), lebesgue(), mesh, cfg=cfg)
    ut = solve_dirichlet(EllipticOperator(p), lebesgue(t), mesh, cfg=cfg.rescaled(t ** (1 / (p - 1)), p))
    a = necessity_check(u, lebesgue(), beta, p, SQ)
    b = necessity_check(ut, lebesgue(t), beta, p, SQ)
    assert b.constant == pytest.approx(a.constant, rel=1e-8)
