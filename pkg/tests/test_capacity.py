import math

import numpy as np
import pytest

from holderlab.capacity import annulus_capacity, capacity, cdc_check, disk_polygon, gamma_sample_points, p_energy
from holderlab.errors import LabError
from holderlab.geometry import l_shape, rectangle, unit_square


def annulus(r, R, p, h):
    K = disk_polygon((0, 0), r, 64, circumscribed=True)
    U = disk_polygon((0, 0), R, 64)
    return capacity(K, U, p, h)


def test_annulus_closed_form_values():
    assert annulus_capacity(0.25, 1.0, 2.0) == pytest.approx(2 * math.pi / math.log(4))
    # p -> 2 limit of the general formula
    assert annulus_capacity(0.25, 1.0, 2.0 - 1e-7) == pytest.approx(2 * math.pi / math.log(4), rel=1e-5)


@pytest.mark.parametrize("p", [1.5, 2.0])
def test_annulus_discrete_close_and_above(p):
    rep = annulus(0.25, 1.0, p, 1 / 16)
    exact = annulus_capacity(0.25, 1.0, p)
    # inscribed U and circumscribed K make the admissible class smaller
    assert rep.value >= exact * (1 - 1e-9)
    assert rep.value == pytest.approx(exact, rel=0.03)


def test_annulus_converges():
    exact = annulus_capacity(0.25, 1.0, 2.0)
    errs = [annulus(0.25, 1.0, 2.0, h).value - exact for h in (1 / 8, 1 / 16)]
    assert errs[1] < errs[0]


def test_empty_condenser_has_zero_capacity():
    rep = capacity(None, unit_square(), 2.0, 0.25)
    assert rep.value == 0.0
    assert np.all(rep.minimizer.values == 0.0)


def test_monotone_in_K_and_antimonotone_in_U():
    U = disk_polygon((0.5, 0.5), 0.45, 64)
    vals = [capacity(disk_polygon((0.5, 0.5), r, 64), U, 1.5, 1 / 24).value for r in (0.08, 0.15, 0.25)]
    assert vals[0] <= vals[1] <= vals[2]
    K = disk_polygon((0.5, 0.5), 0.1, 64)
    outer = [capacity(K, disk_polygon((0.5, 0.5), R, 64), 1.5, 1 / 24).value for R in (0.3, 0.4, 0.5)]
    assert outer[0] >= outer[1] >= outer[2]


def test_scale_invariance_p2():
    small = annulus(0.2, 0.5, 2.0, 1 / 32).value
    large = capacity(disk_polygon((0, 0), 0.4, 64, circumscribed=True), disk_polygon((0, 0), 1.0, 64),
                     2.0, 1 / 16).value
    assert small == pytest.approx(large, rel=0.01)


def test_minimizer_bounds_and_energy():
    rep = annulus(0.25, 1.0, 1.5, 1 / 12)
    u = rep.minimizer
    assert u.min >= -1e-12 and u.max <= 1 + 1e-12
    assert rep.value == pytest.approx(p_energy(u, 1.5), rel=1e-14)


def test_square_condenser():
    rep = capacity(rectangle(0.4, 0.4, 0.6, 0.6), unit_square(), 2.0, 1 / 20)
    # between the inscribed and circumscribed disk annuli
    lo = annulus_capacity(0.1, 0.5 * math.sqrt(2), 2.0)
    hi = annulus_capacity(0.1 * math.sqrt(2), 0.5, 2.0)
    assert lo <= rep.value <= hi * 1.02


def test_condenser_errors():
    U = disk_polygon((0, 0), 1.0, 64)
    with pytest.raises(LabError) as err:
        capacity(disk_polygon((0.9, 0), 0.3, 32), U, 2.0, 0.1)
    assert err.value.code == "bad-condenser"
    with pytest.raises(LabError) as err:
        capacity(disk_polygon((0, 0), 1e-3, 16), U, 2.0, 0.1)
    assert err.value.code == "under-resolved"
    with pytest.raises(LabError) as err:
        capacity(disk_polygon((0, 0), 0.3, 16), U, 2.5, 0.1)
    assert err.value.code == "bad-exponent"


# ------------------------------------------------------------- CDC


def test_cdc_flat_boundary():
    dom = rectangle(-1, -1, 1, 1)
    rep = cdc_check(dom, 2.0, radii=[0.25], boundary_samples=4, resolution=8)
    assert rep.gamma_estimate >= 0.3
    assert all(s.ratio > 0 for s in rep.samples)


def test_cdc_corner_exceeds_flat():
    dom = unit_square()
    flat = cdc_check(unit_square(gamma=[0]), 2.0, radii=[0.2], boundary_samples=3, resolution=8)
    mid = [s for s in flat.samples if abs(s.xi[0] - 0.5) < 1e-12][0]
    corner = cdc_check(dom, 2.0, radii=[0.2], boundary_samples=1, resolution=8).samples[0]
    assert corner.xi == (0.0, 0.0)
    assert corner.ratio >= mid.ratio


def test_cdc_csv_header():
    rep = cdc_check(unit_square(gamma=[0]), 2.0, radii=[0.2], boundary_samples=2, resolution=6)
    assert rep.csv().splitlines()[0] == "xi_x,xi_y,R,numerator,denominator,ratio,flag"
    assert len(rep.csv().splitlines()) == 1 + len(rep.samples)


def test_cdc_errors():
    with pytest.raises(LabError) as err:
        cdc_check(unit_square(gamma="none"), 2.0)
    assert err.value.code == "gamma-empty"
    with pytest.raises(LabError) as err:
        cdc_check(unit_square(), 2.0, radii=[5.0])
    assert err.value.code == "bad-radius"


def test_gamma_sample_points_lshape():
    pts = gamma_sample_points(l_shape())
    # 6 vertices and 6 midpoints
    assert len(pts) == 12
    assert len(gamma_sample_points(l_shape(), 5)) == 5
