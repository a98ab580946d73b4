import math

import numpy as np
import pytest

from holderlab.barrier import (BarrierConfig, auxiliary_solution, build_barrier, eta_values, shell_centers)
from holderlab.errors import LabError
from holderlab.geometry import build_mesh, distance_to_gamma, unit_square
from holderlab.measures import lebesgue, segment_charge, zero_charge
from holderlab.solver import EllipticOperator, supersolution_residual

SQ = unit_square()
THETA, BETA0 = 0.25, 0.25


def test_config_validation():
    for kw in ({"theta": 1.0}, {"theta": 0.0}, {"beta0": 0.0}, {"beta0": 1.5},
               {"k_min": 3, "k_max": 2}, {"covering_overlap": 0.5}):
        with pytest.raises(LabError) as err:
            BarrierConfig(**kw)
        assert err.value.code == "bad-config"


def test_proof_regime_flag():
    assert not BarrierConfig(theta=0.25, beta0=0.25).proof_regime
    assert BarrierConfig(theta=1e-4, beta0=0.25).proof_regime


def test_eta_plateaus():
    xi, R, ell = np.array([0.0, 0.5]), 0.2, math.sqrt(2)
    pts = np.array([[0.0, 0.5], [0.05, 0.5], [0.2, 0.5], [0.0, 0.8]])
    v = eta_values(pts, xi, R, THETA, BETA0, ell)
    lo, hi = 0.25 * (THETA * R / ell) ** BETA0, (R / ell) ** BETA0
    assert v[0] == pytest.approx(lo) and v[1] == pytest.approx(lo)
    assert v[2] == pytest.approx(hi) and v[3] == pytest.approx(hi)
    r = np.linspace(0, 0.3, 50)
    w = eta_values(np.column_stack([r, np.full_like(r, 0.5)]), xi, R, THETA, BETA0, ell)
    assert np.all(np.diff(w) >= 0)


def test_auxiliary_solution_flat_edge_bounds():
    u = auxiliary_solution(SQ, (0.0, 0.5), 0.25, zero_charge(), THETA, BETA0, p=2.0, strict=False)
    m = u.metadata
    assert m["bounds_ok"]
    assert m["lower"] >= m["lower_bound"] and m["upper"] <= m["upper_bound"]
    # no charge: values stay between the plateaus of eta
    assert u.min >= m["lower_bound"] * (1 - 1e-12)


def test_auxiliary_solution_scaling_in_R():
    a = auxiliary_solution(SQ, (0.0, 0.5), 0.25, zero_charge(), THETA, BETA0, p=2.0, strict=False)
    b = auxiliary_solution(SQ, (0.0, 0.5), 0.125, zero_charge(), THETA, BETA0, p=2.0, strict=False)
    # same normalized geometry, data scaled by 2**-beta0 (meshes agree up to rounding)
    xi = np.array([0.0, 0.5])
    v = b.mesh.evaluate(b.values, xi + 0.5 * (a.mesh.nodes - xi))
    ok = ~np.isnan(v)
    assert ok.mean() > 0.99
    assert np.allclose(v[ok], 2 ** -BETA0 * a.values[ok], rtol=0.02)


def test_auxiliary_solution_bad_center():
    with pytest.raises(LabError) as err:
        auxiliary_solution(SQ, (0.5, 0.5), 0.25, zero_charge())
    assert err.value.code == "bad-center"


def test_shell_centers_cover_band():
    R = 0.5
    c = shell_centers(SQ, R, THETA, 1.5)
    assert np.all(distance_to_gamma(SQ, c) <= 1e-12)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (4000, 2))
    pts = pts[distance_to_gamma(SQ, pts) <= THETA * R]
    nearest = np.hypot(pts[:, None, 0] - c[None, :, 0], pts[:, None, 1] - c[None, :, 1]).min(1)
    assert np.all(nearest <= 2 * THETA * R)


def _zero_barrier(k_max):
    cfg = BarrierConfig(THETA, BETA0, k_max=k_max)
    mesh = build_mesh(SQ, 1 / 8, grade=(1.5, SQ.diam * THETA ** k_max / 2))
    with pytest.warns(UserWarning, match="truncated-shells"):
        res = build_barrier(SQ, zero_charge(), EllipticOperator(2.0), cfg, mesh)
    return cfg, mesh, res


@pytest.fixture(scope="module")
def small_barrier():
    return _zero_barrier(4)


def test_zero_charge_barrier_slope(small_barrier):
    _, mesh, res = small_barrier
    # the fitted slope approaches beta0 from below as shells are added
    coarse = _zero_barrier(3)[2]
    assert 0 < coarse.slope < res.slope < BETA0 + 0.1
    assert res.spread < 2.0
    assert np.all(np.isfinite(res.s.values))
    d = distance_to_gamma(SQ, mesh.nodes)
    assert np.all(res.s.values[d <= 1e-12] == 0.0)
    assert np.all(res.s.values[d > 1e-12] > 0)
    assert "theta**beta0" in res.warnings[0]


def test_barrier_csv_headers(small_barrier):
    _, mesh, res = small_barrier
    lines = res.csv(SQ, BETA0).splitlines()
    assert lines[0] == "x,y,delta,s,s_over_delta_beta0"
    assert len(lines) == mesh.n_nodes + 1
    assert res.shells_csv().splitlines()[0] == "k,R,xi_x,xi_y"


def test_local_pieces_are_discrete_solutions():
    u = auxiliary_solution(SQ, (0.0, 0.5), 0.25, lebesgue(), THETA, BETA0, p=1.5, strict=False)
    assert supersolution_residual(EllipticOperator(1.5), u, lebesgue()) >= -1e-9


def test_barrier_monotone_in_charge():
    cfg = BarrierConfig(THETA, BETA0, k_max=2)
    mesh = build_mesh(SQ, 1 / 8)
    op = EllipticOperator(2.0)
    nu1 = lebesgue(0.5)
    nu2 = lebesgue(0.5) + segment_charge((0.3, 0.3), (0.7, 0.6), 0.5)
    kw = dict(q=4.0, norm=1.0, rescale=0.002)
    s1 = build_barrier(SQ, nu1, op, cfg, mesh, **kw).s.values
    s2 = build_barrier(SQ, nu2, op, cfg, mesh, **kw).s.values
    assert np.all(s1 <= s2 + 1e-12)


def test_barrier_errors():
    cfg = BarrierConfig(THETA, BETA0, k_max=2)
    mesh = build_mesh(SQ, 1 / 4)
    weighted = EllipticOperator(2.0, L=2, kind="weighted", weight=lambda x: 1 + x[:, 0])
    with pytest.raises(LabError) as err:
        build_barrier(SQ, lebesgue(), weighted, cfg, mesh, q=math.inf)
    assert err.value.code == "unsupported-operator"
    signed = lebesgue() + (-1.0) * segment_charge((0.2, 0.2), (0.6, 0.6))
    with pytest.raises(LabError) as err:
        build_barrier(SQ, signed, EllipticOperator(2.0), cfg, mesh)
    assert err.value.code == "bad-charge"
    with pytest.raises(LabError) as err:
        build_barrier(unit_square(gamma="none"), lebesgue(), EllipticOperator(2.0), cfg, mesh)
    assert err.value.code == "gamma-empty"
