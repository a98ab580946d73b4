"""Variational p-capacity of condensers and the capacity density condition.

``cap_p(K, U) = inf { int_U |grad u|^p : u = 0 on dU, u >= 1 on K }`` is
computed by minimizing the regularized p-energy over P1 fields on a mesh of
``U \\ K`` whose inner boundary carries the value 1.  Any admissible P1 field
gives an upper bound, so when ``K`` is approximated from outside and ``U``
from inside the discrete value never undershoots the exact capacity.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon

from .errors import LabError
from .geometry import Domain2D, build_mesh, from_shapely, regular_polygon_vertices, segment_distances
from .solver import PEnergy, ScalarField, SolveConfig, minimize_energy

DISK_SIDES = 256


def _as_shapely(obj):
    if obj is None:
        return None
    if isinstance(obj, Domain2D):
        return obj.to_shapely()
    if hasattr(obj, "geom_type"):
        return obj
    return Polygon(np.asarray(obj, dtype=float))


def disk_polygon(center, radius, n=DISK_SIDES, circumscribed=False):
    """Shapely regular n-gon; circumscribed polygons contain the disk."""
    return Polygon(regular_polygon_vertices(center, radius, n, circumscribed))


def annulus_capacity(r, R, p, n=2):
    """Exact ``cap_p(closed B_r, B_R)`` in the plane (``n = 2``) for ``1 < p``."""
    if n != 2:
        raise LabError("bad-exponent", "closed form implemented for n = 2")
    if p == 2:
        return 2 * math.pi / math.log(R / r)
    a = (p - 2) / (p - 1)
    return 2 * math.pi * abs(a) ** (p - 1) * abs(R ** a - r ** a) ** (1 - p)


@dataclass
class CapacityReport:
    value: float
    minimizer: ScalarField
    mesh_h: float
    p: float
    info: dict = field(default_factory=dict)


def p_energy(field, p):
    """``int |grad u|^p`` of a P1 field (no regularization)."""
    g = field.gradients
    return float(field.mesh.areas @ np.hypot(g[:, 0], g[:, 1]) ** p)


def capacity(K, U, p, target_h, cfg=None):
    """Discrete ``cap_p(K, U)`` on a mesh of ``U \\ K`` with size ``target_h``.

    ``K`` and ``U`` may be :class:`Domain2D`, vertex arrays or shapely
    polygons; ``K=None`` (or an empty set) gives capacity 0.
    """
    if not 1 < p <= 2:
        raise LabError("bad-exponent", f"need 1 < p <= 2, got {p}")
    cfg = SolveConfig() if cfg is None else cfg
    Ku, Us = _as_shapely(K), _as_shapely(U)
    if Ku is None or Ku.is_empty:
        mesh = build_mesh(U if isinstance(U, Domain2D) else from_shapely(Us), target_h)
        zero = ScalarField(mesh, np.zeros(mesh.n_nodes), {"residual": 0.0})
        return CapacityReport(0.0, zero, mesh.h, p, {"constrained_nodes": 0})
    if not (Ku.within(Us) and Ku.distance(Us.exterior) > 0
            and all(Ku.distance(Polygon(h)) > 0 for h in Us.interiors)):
        raise LabError("bad-condenser", "K must lie in U with a positive gap to its boundary")
    if Ku.area < 0.5 * target_h ** 2:
        raise LabError("under-resolved", f"K (area {Ku.area:.3g}) holds no mesh triangle at h={target_h}")
    ring = Us.difference(Ku)
    if ring.geom_type != "Polygon":
        raise LabError("bad-condenser", "U \\ K must be connected")
    dom = from_shapely(ring)
    mesh = build_mesh(dom, target_h)
    kedges = _ring_edges(Ku)
    on_k = mesh.boundary & (segment_distances(mesh.nodes, kedges).min(axis=1) <= 1e-9 * dom.diam)
    if not on_k.any():
        raise LabError("under-resolved", "no mesh nodes on K")
    u0 = np.where(on_k, 1.0, 0.0)
    energy = PEnergy(mesh, p)
    u, info = minimize_energy(energy, u0, ~mesh.boundary, cfg, label="capacity")
    info["constrained_nodes"] = int(on_k.sum())
    fld = ScalarField(mesh, u, info)
    return CapacityReport(p_energy(fld, p), fld, mesh.h, p, info)


def _ring_edges(geom):
    polys = getattr(geom, "geoms", [geom])
    segs = []
    for poly in polys:
        for r in [poly.exterior, *poly.interiors]:
            c = np.asarray(r.coords)
            segs.append(np.stack([c[:-1], c[1:]], axis=1))
    return np.concatenate(segs)


@dataclass
class CdcSample:
    xi: tuple
    R: float
    numerator: float
    denominator: float
    ratio: float
    flag: str = ""


@dataclass
class CdcReport:
    gamma_estimate: float
    samples: list

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["xi_x", "xi_y", "R", "numerator", "denominator", "ratio", "flag"])
        for s in self.samples:
            w.writerow([s.xi[0], s.xi[1], s.R, s.numerator, s.denominator, s.ratio, s.flag])
        return buf.getvalue()


def gamma_sample_points(domain, count=None):
    """Gamma vertices and gamma edge midpoints (evenly thinned to ``count``)."""
    if not domain.gamma:
        raise LabError("gamma-empty", "capacity density check needs a nonempty gamma")
    e = domain.gamma_edges
    pts = np.concatenate([e[:, 0], e[:, 1], 0.5 * (e[:, 0] + e[:, 1])])
    pts = np.unique(np.round(pts, 12), axis=0)
    if count is not None and count < len(pts):
        pts = pts[np.linspace(0, len(pts) - 1, count).round().astype(int)]
    return pts


def cdc_check(domain, p, radii=None, boundary_samples=None, resolution=16, cfg=None):
    """Sampled capacity density ratios on gamma.

    For each sample ``xi`` and radius ``R`` the numerator is the discrete
    ``cap_p(closed B(xi, R) \\ domain, B(xi, 2R))`` on a mesh of size
    ``R / resolution``; the denominator is the exact ball capacity
    ``cap_p(closed B_R, B_2R)``.  Samples whose complement piece is empty at
    mesh scale are kept with ratio 0 and flag ``"under-resolved"`` but do not
    enter ``gamma_estimate``.
    """
    xi_all = gamma_sample_points(domain, boundary_samples)
    if radii is None:
        radii = domain.diam * 2.0 ** -np.arange(1, 5)
    radii = [float(r) for r in radii]
    if any(not 0 < r <= domain.diam * (1 + 1e-12) for r in radii):
        raise LabError("bad-radius", "radii must lie in (0, diam]")
    omega = domain.to_shapely()
    samples = []
    for R in radii:
        den = annulus_capacity(R, 2 * R, p)
        h = R / resolution
        for xi in xi_all:
            xi = (float(xi[0]), float(xi[1]))
            big = disk_polygon(xi, 2 * R, 128)
            ball = disk_polygon(xi, R, 128, circumscribed=True)
            K = ball.difference(omega)
            if K.geom_type == "MultiPolygon":
                K = max(K.geoms, key=lambda g: g.area) if len(K.geoms) == 1 else K
            if K.is_empty or K.area < 0.5 * h * h:
                samples.append(CdcSample(xi, R, 0.0, den, 0.0, "under-resolved"))
                continue
            try:
                num = capacity(K, big, p, h, cfg).value
                flag = ""
            except LabError as err:
                if err.code not in ("under-resolved", "bad-condenser"):
                    raise
                samples.append(CdcSample(xi, R, 0.0, den, 0.0, err.code))
                continue
            samples.append(CdcSample(xi, R, num, den, num / den, flag))
    good = [s.ratio for s in samples if not s.flag]
    est = min(good) if good else 0.0
    return CdcReport(est, samples)
