import math

import numpy as np
import pytest
from scipy import integrate

from conftest import square_mesh
from holderlab.errors import LabError
from holderlab.geometry import build_mesh, l_shape, unit_square
from holderlab.measures import (ScanSpec, atom_charge, ball_mass, beta_exponent, charge_quadrature,
                                default_centers, density_charge, distance_weight, lebesgue, morrey_csv,
                                morrey_norm, morrey_quotient, project_load, segment_charge, zero_charge)

SQ = unit_square()


# ---------------------------------------------------------------- ball mass


def test_ball_mass_examples():
    assert ball_mass(lebesgue(), "total", (0.5, 0.5), 0.25, SQ) == pytest.approx(math.pi * 0.0625, rel=1e-12)
    assert ball_mass(atom_charge((0, 0)), "total", (0.25, 0), 0.1, SQ) == 0.0
    seg = segment_charge((0, 0.5), (1, 0.5))
    assert ball_mass(seg, "total", (0.5, 0.5), 0.2, SQ) == pytest.approx(0.4, rel=1e-12)


def test_ball_mass_clipped_by_domain():
    # quarter disk at a corner, half disk at an edge
    assert ball_mass(lebesgue(), "total", (0, 0), 0.3, SQ) == pytest.approx(math.pi * 0.09 / 4, rel=1e-12)
    assert ball_mass(lebesgue(), "total", (0.5, 0), 0.3, SQ) == pytest.approx(math.pi * 0.09 / 2, rel=1e-12)


def test_ball_mass_near_tangent_edge():
    # circle that barely crosses the left edge; the clipped area must stay below the full disk
    r = 0.0013810679320049757
    full = math.pi * r * r
    for x in (r * (1 - 1e-12), r, r * (1 + 1e-12)):
        m = ball_mass(lebesgue(), "total", (x, 0.5), r, SQ)
        assert 0.5 * full <= m <= full * (1 + 1e-12)


def test_ball_mass_parts():
    nu = lebesgue(2.0) + lebesgue(0.5).scaled(-1.0)
    c, r = (0.5, 0.5), 0.2
    pos = ball_mass(nu, "positive", c, r, SQ)
    neg = ball_mass(nu, "negative", c, r, SQ)
    assert pos == pytest.approx(2 * math.pi * r * r)
    assert neg == pytest.approx(0.5 * math.pi * r * r)
    assert ball_mass(nu, "total", c, r, SQ) == pytest.approx(pos + neg)


def test_ball_mass_linear_density():
    nu = density_charge(lambda x: x[..., 0])
    # symmetric ball: mass = center_x * area
    assert ball_mass(nu, "total", (0.4, 0.5), 0.2, SQ) == pytest.approx(0.4 * math.pi * 0.04, rel=1e-9)


@pytest.mark.parametrize("t", [0.25, 0.5, 0.75, 0.9])
def test_weighted_ball_mass_against_scipy(t):
    nu = distance_weight(lebesgue(), t, SQ)
    # ball away from the medial axis: delta = x1 on the ball
    cx, cy, r = 0.2, 0.5, 0.1
    exact = integrate.dblquad(lambda y, x: x ** -t, cx - r, cx + r,
                              lambda x: cy - math.sqrt(max(r * r - (x - cx) ** 2, 0)),
                              lambda x: cy + math.sqrt(max(r * r - (x - cx) ** 2, 0)), epsabs=1e-13)[0]
    assert ball_mass(nu, "total", (cx, cy), r, SQ) == pytest.approx(exact, rel=1e-6)
    # ball crossing gamma: integrable singularity at x1 = 0
    cx, r = 0.05, 0.1
    exact = integrate.quad(lambda x: 2 * math.sqrt(max(r * r - (x - cx) ** 2, 0)), 0, cx + r,
                           weight="alg", wvar=(-t, 0), epsabs=1e-13)[0]
    assert ball_mass(nu, "total", (cx, 0.5), r, SQ) == pytest.approx(exact, rel=1e-6)


def test_weighted_divergent_ball():
    nu = distance_weight(lebesgue(), 1.0, SQ)
    assert math.isinf(ball_mass(nu, "total", (0.05, 0.5), 0.1, SQ))
    assert math.isfinite(ball_mass(nu, "total", (0.5, 0.5), 0.1, SQ))


def test_bad_radius():
    with pytest.raises(LabError) as err:
        ball_mass(lebesgue(), "total", (0.5, 0.5), 0.0, SQ)
    assert err.value.code == "bad-radius"


def test_ball_mass_additivity_random():
    rng = np.random.default_rng(1)
    a = lebesgue(0.3) + segment_charge((0.1, 0.2), (0.9, 0.7), 0.5, 1.5)
    b = distance_weight(lebesgue(), 0.4, SQ) + atom_charge((0.3, 0.3), 0.2)
    for _ in range(25):
        c, r = rng.uniform(0, 1, 2), rng.uniform(0.01, 0.6)
        both = ball_mass(a + b, "total", c, r, SQ)
        assert both == pytest.approx(ball_mass(a, "total", c, r, SQ) + ball_mass(b, "total", c, r, SQ), rel=1e-12)


# ------------------------------------------------------------- Morrey norm


def test_morrey_zero_charge():
    for q in (1.0, 2.0, math.inf):
        assert morrey_norm(zero_charge(), q, "floated", SQ).value == 0.0


def test_morrey_lebesgue_floated_pi():
    rep = morrey_norm(lebesgue(), math.inf, "floated", SQ)
    assert rep.value == pytest.approx(math.pi, rel=1e-12)
    assert not rep.divergent
    x, y, r = rep.witness
    assert morrey_quotient(lebesgue(), math.inf, (x, y), r, SQ) == pytest.approx(rep.value, rel=1e-12)


def test_morrey_lebesgue_global_pi():
    rep = morrey_norm(lebesgue(), math.inf, "global", SQ)
    assert rep.value == pytest.approx(math.pi, rel=1e-12)


def test_morrey_atom_divergent():
    rep = morrey_norm(atom_charge((0.5, 0.5)), 2.0, "floated", SQ)
    assert rep.divergent
    assert not morrey_norm(atom_charge((0.5, 0.5)), 1.0, "global", SQ).divergent


@pytest.mark.parametrize("charge,q,divergent", [
    (segment_charge((0, 0.5), (1, 0.5)), 2.0, False),
    (segment_charge((0, 0.5), (1, 0.5)), math.inf, True),
    (lebesgue(), 4.0, False),
])
def test_morrey_divergence_detection(charge, q, divergent):
    assert morrey_norm(charge, q, "floated", SQ).divergent == divergent


def test_morrey_weighted_classes():
    nu = distance_weight(lebesgue(), 0.5, SQ)
    assert nu.q == pytest.approx(4.0)
    assert not morrey_norm(nu, 4.0, "floated", SQ).divergent
    assert morrey_norm(nu, math.inf, "floated", SQ).divergent


def test_morrey_bad_inputs():
    with pytest.raises(LabError) as err:
        morrey_norm(lebesgue(), 0.5, "floated", SQ)
    assert err.value.code == "bad-exponent"
    with pytest.raises(LabError) as err:
        morrey_norm(lebesgue(), 2.0, "local", SQ)
    assert err.value.code == "bad-mode"


def _random_charge(rng):
    nu = lebesgue(rng.uniform(0.1, 2))
    for _ in range(rng.integers(0, 3)):
        a, b = rng.uniform(0.05, 0.95, 2), rng.uniform(0.05, 0.95, 2)
        nu = nu + segment_charge(a, b, rng.uniform(0.1, 1), rng.uniform(0.1, 1))
    return nu


def test_floated_below_global_and_scaling():
    rng = np.random.default_rng(2)
    for _ in range(5):
        nu = _random_charge(rng)
        scan = ScanSpec(centers=default_centers(SQ, nu, 16, 6), levels=8)
        f = morrey_norm(nu, 2.0, "floated", SQ, scan).value
        g = morrey_norm(nu, 2.0, "global", SQ, scan).value
        assert f <= g * (1 + 1e-12)
        assert morrey_norm(nu.scaled(2.5), 2.0, "floated", SQ, scan).value == pytest.approx(2.5 * f, rel=1e-13)


def test_inclusion_chain_monotone():
    rng = np.random.default_rng(3)
    small, large = unit_square(gamma=[3]), unit_square()
    centers = default_centers(large, None, 16, 6)
    scan = ScanSpec(centers=centers, levels=8)
    for _ in range(10):
        nu = _random_charge(rng)
        assert (morrey_norm(nu, 2.0, "floated", large, scan).value
                <= morrey_norm(nu, 2.0, "floated", small, scan).value * (1 + 1e-12))


def test_floated_skips_centers_on_gamma():
    centers = np.array([[0.0, 0.5], [0.5, 0.5]])
    rep = morrey_norm(lebesgue(), math.inf, "floated", SQ, ScanSpec(centers=centers))
    assert rep.skipped == 1


def test_prop61_bound():
    """Weighting by delta^-t moves class q to qn/(n+qt) with the norm bounded
    by |mu| times max (2r/delta)^t <= 1 over the scanned pairs."""
    mu = lebesgue()
    scan = ScanSpec(centers=default_centers(SQ, None, 16, 8), levels=10)
    base = morrey_norm(mu, math.inf, "floated", SQ, scan).value
    for t in (0.25, 0.5, 1.0):
        nu = distance_weight(mu, t, SQ)
        rep = morrey_norm(nu, nu.q, "floated", SQ, scan)
        assert math.isfinite(rep.value) and not rep.divergent
        assert rep.value <= base * (1 + 1e-6)


def test_morrey_csv_row():
    rep = morrey_norm(lebesgue(), math.inf, "floated", SQ)
    text = morrey_csv([rep])
    head, row = text.strip().splitlines()
    assert head == "q,mode,value,witness_x,witness_y,witness_r,divergent"
    assert row.startswith("inf,floated,3.14159")


# --------------------------------------------------------- beta and classes


def test_beta_examples():
    assert beta_exponent(2, math.inf) == 2
    assert beta_exponent(2, 2) == 1
    assert beta_exponent(1.5, 4) == pytest.approx(2)
    with pytest.raises(LabError) as err:
        beta_exponent(2, 1)
    assert err.value.code == "beta-nonpositive"


def test_distance_weight_classes():
    assert distance_weight(lebesgue(), 1.0, SQ).q == pytest.approx(2.0)
    nu = lebesgue()
    assert distance_weight(nu, 0.0, SQ) is nu
    seg = segment_charge((0, 0.5), (1, 0.5))
    assert distance_weight(seg, 0.4, SQ).q == pytest.approx(2 / 1.4)


def test_distance_weight_errors():
    with pytest.raises(LabError) as err:
        distance_weight(atom_charge((0.5, 0.5)), 0.5, SQ)
    assert err.value.code == "bad-charge"
    with pytest.raises(LabError) as err:
        distance_weight(segment_charge((0, 0.5), (1, 0.5)), 1.5, SQ)
    assert err.value.code == "weight-out-of-range"
    with pytest.raises(LabError) as err:
        distance_weight(lebesgue(), 0.5, unit_square(gamma="none"))
    assert err.value.code == "gamma-empty"


# ----------------------------------------------------------------- loads


def test_load_atom_at_node():
    mesh = square_mesh(1 / 8)
    k = 30
    load = project_load(atom_charge(tuple(mesh.nodes[k])), mesh)
    expected = np.zeros(mesh.n_nodes)
    expected[k] = 1
    assert np.allclose(load, expected, atol=1e-14)


def test_load_sums():
    mesh = square_mesh(1 / 8)
    assert project_load(lebesgue(), mesh).sum() == pytest.approx(1.0, rel=1e-13)
    assert project_load(density_charge(lambda x: x[..., 0]), mesh).sum() == pytest.approx(0.5, rel=1e-13)
    seg = segment_charge((0.05, 0.3), (0.95, 0.8), 1.0, 3.0)
    length = math.hypot(0.9, 0.5)
    assert project_load(seg, mesh).sum() == pytest.approx(2.0 * length, rel=1e-12)


@pytest.mark.parametrize("t", [0.25, 0.5, 0.9])
def test_load_weighted_total(t):
    mesh = square_mesh(1 / 8)
    # int_square delta^-t, delta = min(x, 1-x, y, 1-y): 8 triangles of the form
    # {0 < x < 1/2, x < y < 1 - x}, each giving int_0^1/2 x^-t (1 - 2x) dx
    one = integrate.quad(lambda x: 1 - 2 * x, 0, 0.5, weight="alg", wvar=(-t, 0))[0]
    exact = 4 * one
    load = project_load(distance_weight(lebesgue(), t, SQ), mesh)
    assert load.sum() == pytest.approx(exact, rel=1e-6)


@pytest.mark.parametrize("t", [0.4, 0.9])
def test_weighted_segment_ending_on_gamma(t):
    nu = distance_weight(segment_charge((0, 0.5), (0.5, 0.5)), t, SQ)
    exact = 0.5 ** (1 - t) / (1 - t)
    assert ball_mass(nu, "total", (0.25, 0.5), 0.3, SQ) == pytest.approx(exact, rel=1e-6)
    assert project_load(nu, square_mesh(1 / 8)).sum() == pytest.approx(exact, rel=1e-6)


def test_load_non_integrable():
    mesh = square_mesh(1 / 8)
    with pytest.raises(LabError) as err:
        project_load(distance_weight(lebesgue(), 2.0, SQ), mesh)
    assert err.value.code == "non-integrable-load"
    load = project_load(distance_weight(lebesgue(), 1.0, SQ), mesh)
    assert np.all(np.isinf(load[mesh.on_gamma]))
    assert np.all(np.isfinite(load[~mesh.boundary]))


def test_load_signed_charge():
    mesh = square_mesh(1 / 8)
    nu = lebesgue(2.0) + lebesgue(0.5).scaled(-1)
    assert project_load(nu, mesh).sum() == pytest.approx(1.5)


def test_quadrature_integrates_p1_exactly():
    mesh = build_mesh(l_shape(), 0.1)
    quad = charge_quadrature(lebesgue(), mesh)
    f = 1 + mesh.nodes[:, 0] - 2 * mesh.nodes[:, 1]
    # exact: area + int x - 2 int y over the L
    area = 0.75
    ix = 0.125 + 0.1875  # rectangles [0,.5]x[0,1] and [.5,1]x[0,.5]
    iy = ix  # the L is symmetric in x <-> y
    assert quad.integrate(f) == pytest.approx(area + ix - 2 * iy, rel=1e-12)
