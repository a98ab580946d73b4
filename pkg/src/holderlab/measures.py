"""Signed Radon charges, ball masses, sampled Morrey norms and mesh loads.

A charge is a pair of component lists (positive and negative part).  The
components are analytic descriptors:

* :class:`Density` -- ``coef * f(x) dx`` (``f = 1`` is Lebesgue measure),
* :class:`Segment` -- linear density times arc length on a straight segment,
* :class:`Atom` -- a point mass,
* :class:`Weighted` -- ``delta_gamma(x)**(-t)`` times a density or segment.

Ball masses are exact for constant densities (circle/polygon clipping),
segments and atoms, and use polar Gauss quadrature otherwise.  Morrey norms
are sampled over a finite set of centers and dyadic radii; a report always
carries its witness ball and sample counts.
"""

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import LabError
from .geometry import distance_to_gamma, segment_distances

N_DIM = 2
GROWTH_FACTOR = 1.05  # per-halving growth of the finest per-level maxima read as blow-up

# Dunavant degree-5 rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
TRI7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRI7_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


# ------------------------------------------------------------ components


@dataclass(frozen=True, eq=False)
class Density:
    """``coef * func(x)`` with respect to Lebesgue measure; ``func=None`` means 1."""

    func: object = None
    coef: float = 1.0
    label: str = "lebesgue"

    def values(self, pts):
        if self.func is None:
            return np.full(len(pts), self.coef)
        return self.coef * np.asarray(self.func(pts), dtype=float)

    def scaled(self, c):
        return replace(self, coef=self.coef * c)


@dataclass(frozen=True, eq=False)
class Segment:
    """Density ``c0 -> c1`` (linear in arc length) on the segment ``a -> b``."""

    a: tuple
    b: tuple
    c0: float = 1.0
    c1: float = 1.0
    label: str = "segment"

    def scaled(self, c):
        return replace(self, c0=self.c0 * c, c1=self.c1 * c)

    @property
    def length(self):
        return float(np.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1]))

    def point(self, s):
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        return a + np.asarray(s, float)[..., None] * (b - a)

    def density(self, s):
        return self.c0 + (self.c1 - self.c0) * np.asarray(s, float)


@dataclass(frozen=True, eq=False)
class Atom:
    point: tuple
    mass: float = 1.0
    label: str = "atom"

    def scaled(self, c):
        return replace(self, mass=self.mass * c)


@dataclass(frozen=True, eq=False)
class Weighted:
    """``delta_gamma**(-t)`` times ``base``; ``domain`` supplies gamma."""

    base: object
    t: float
    domain: object
    label: str = "weighted"

    def scaled(self, c):
        return replace(self, base=self.base.scaled(c))

    def weight(self, pts, anchors=None, lam=None):
        """``delta**(-t)`` at ``pts``; see ``_anchored_distance`` for the anchors."""
        pts = np.atleast_2d(pts)
        if self.t <= 0:
            return np.ones(len(pts))
        d = distance_to_gamma(self.domain, pts)
        if anchors is not None:
            diam = self.domain.diam
            close = d < 1e-6 * diam
            if close.any():
                d[close] = _anchored_distance(self.domain.gamma_edges, anchors[close], lam[close], 1e-12 * diam)
        # quadrature nodes never sit on gamma; the floor only guards overflow
        return np.maximum(d, 1e-150 * self.domain.diam) ** (-self.t)


def _check_component(c):
    if isinstance(c, Atom):
        if not c.mass > 0:
            raise LabError("bad-charge", "atom masses must be positive")
    elif isinstance(c, Segment):
        if c.c0 < 0 or c.c1 < 0:
            raise LabError("bad-charge", "segment densities must be nonnegative")
    elif isinstance(c, Density):
        if c.coef < 0:
            raise LabError("bad-charge", "density coefficients must be nonnegative")
    elif isinstance(c, Weighted):
        if isinstance(c.base, (Atom, Weighted)):
            raise LabError("bad-charge", "only densities and segments can carry a distance weight")
        _check_component(c.base)
    else:
        raise LabError("bad-charge", f"unknown component {c!r}")


@dataclass(frozen=True, eq=False)
class RadonCharge:
    """``nu = nu_plus - nu_minus``; ``q`` is the declared Morrey class if known."""

    positive: tuple = ()
    negative: tuple = ()
    q: float = None

    def __post_init__(self):
        object.__setattr__(self, "positive", tuple(self.positive))
        object.__setattr__(self, "negative", tuple(self.negative))
        for c in self.positive + self.negative:
            _check_component(c)
        if set(map(id, self.positive)) & set(map(id, self.negative)):
            raise LabError("bad-charge", "a component cannot sit in both parts")

    def components(self, part="total"):
        if part == "positive":
            return [(1.0, c) for c in self.positive]
        if part == "negative":
            return [(1.0, c) for c in self.negative]
        if part == "total":
            return [(1.0, c) for c in self.positive + self.negative]
        if part == "signed":
            return [(1.0, c) for c in self.positive] + [(-1.0, c) for c in self.negative]
        raise LabError("bad-charge", f"unknown part {part!r}")

    @property
    def is_zero(self):
        return not self.positive and not self.negative

    @property
    def is_nonnegative(self):
        return not self.negative

    @property
    def has_atoms(self):
        return any(isinstance(c, Atom) for c in self.positive + self.negative)

    def scaled(self, c):
        c = float(c)
        if c == 0:
            return RadonCharge(q=self.q)
        pos = tuple(x.scaled(abs(c)) for x in self.positive)
        neg = tuple(x.scaled(abs(c)) for x in self.negative)
        return RadonCharge(pos, neg, self.q) if c > 0 else RadonCharge(neg, pos, self.q)

    def __add__(self, other):
        qs = [q for q in (self.q, other.q) if q is not None]
        q = min(qs) if len(qs) == 2 else None
        return RadonCharge(self.positive + other.positive, self.negative + other.negative, q)

    def __rmul__(self, c):
        return self.scaled(c)


def zero_charge():
    return RadonCharge(q=math.inf)


def lebesgue(coef=1.0):
    return RadonCharge((Density(coef=coef),), q=math.inf)


def density_charge(func, q=None, label="density"):
    return RadonCharge((Density(func=func, label=label),), q=q)


def segment_charge(a, b, c0=1.0, c1=None):
    """One-dimensional Hausdorff measure on a segment; class ``M^2`` in the plane."""
    return RadonCharge((Segment(tuple(a), tuple(b), c0, c0 if c1 is None else c1),), q=2.0)


def atom_charge(point, mass=1.0):
    return RadonCharge((Atom(tuple(point), mass),), q=1.0)


# ---------------------------------------------------------- ball masses


def circle_polygon_area(center, r, edges):
    """Area of ``B(center, r)`` intersected with the polygon whose directed
    boundary edges (outer ring ccw, holes cw) are ``edges``.

    Vectorised over ``center`` (``(C, 2)``) and ``r`` (``(C,)``).
    """
    c = np.atleast_2d(np.asarray(center, float))
    r = np.broadcast_to(np.asarray(r, float), (len(c),))
    step = max(1, 200_000 // max(len(edges), 1))  # bounds the (C, E) temporaries
    if len(c) > step:
        return np.concatenate([_circle_polygon_area(c[i:i + step], r[i:i + step], edges)
                               for i in range(0, len(c), step)])
    return _circle_polygon_area(c, r, edges)


def _circle_polygon_area(c, r, edges):
    r = r[:, None]
    a = edges[None, :, 0, :] - c[:, None, :]
    b = edges[None, :, 1, :] - c[:, None, :]
    d = b - a
    A = np.einsum("cej,cej->ce", d, d)
    B = np.einsum("cej,cej->ce", a, d)
    # B**2 - A*C rewritten without cancellation near tangency
    axd = a[..., 0] * d[..., 1] - a[..., 1] * d[..., 0]
    disc = A * r ** 2 - axd ** 2
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(disc > 0, (-B - sq) / A, 1.0)
        t2 = np.where(disc > 0, (-B + sq) / A, 1.0)
    t1, t2 = np.clip(t1, 0, 1), np.clip(t2, 0, 1)
    total = np.zeros(a.shape[:2])
    for ts, te in ((np.zeros_like(t1), t1), (t1, t2), (t2, np.ones_like(t2))):
        p = a + ts[..., None] * d
        q = a + te[..., None] * d
        m = 0.5 * (p + q)
        cross = p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]
        dot = np.einsum("cej,cej->ce", p, q)
        inside = (np.einsum("cej,cej->ce", m, m) <= r ** 2) & (disc > 0)
        total += np.where(inside, 0.5 * cross, 0.5 * r ** 2 * np.arctan2(cross, dot))
    return total.sum(axis=1)


def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


def _graded(n, m):
    """Gauss rule on [0, 1] graded polynomially toward both ends.

    For ``m > 1`` each half uses ``s = y**m / 2`` with ``n`` Gauss nodes in
    ``y``, which turns an endpoint singularity ``s**(-t)`` into the smooth
    ``y**(m(1-t)-1)``.
    """
    x, _, w = _graded_pair(n, m)
    return x, w


def _graded_pair(n, m):
    """``_graded`` plus the complements ``1 - x`` kept to full relative precision."""
    x, w = _gauss(n)
    if m <= 1:
        return x, x[::-1].copy(), w
    s = 0.5 * x ** m
    ws = 0.5 * m * x ** (m - 1) * w
    lo, hi = np.concatenate([s, 1 - s[::-1]]), np.concatenate([1 - s, s[::-1]])
    return lo, hi, np.concatenate([ws, ws[::-1]])


def _grading_for(t):
    if t <= 0:
        return 1
    # m (1 - t) - 1 >= 1 keeps the mapped integrand smooth
    return 5 if t >= 1 else int(min(20, max(4, math.ceil(2.0 / (1.0 - t)))))


def _anchored_distance(edges, anchors, lam, tol):
    """Distance to ``edges`` of the points ``sum_i lam_i * anchors_i``.

    Quadrature nodes graded toward gamma sit far closer to it than their
    coordinates can resolve. Writing them as convex combinations of anchor
    points whose own gamma offsets are snapped to zero below ``tol`` keeps
    the distance accurate relative to its size.
    """
    a, b = edges[:, 0], edges[:, 1]
    d = b - a
    L2 = (d * d).sum(1)
    L = np.sqrt(L2)
    out = np.empty(len(anchors))
    k = anchors.shape[1]
    step = max(1, 400000 // (k * len(edges)))
    for s in range(0, len(anchors), step):
        P, lm = anchors[s:s + step], lam[s:s + step]
        ra = P[:, :, None, :] - a[None, None]
        rb = P[:, :, None, :] - b[None, None]
        ra = np.where((np.hypot(ra[..., 0], ra[..., 1]) < tol)[..., None], 0.0, ra)
        rb = np.where((np.hypot(rb[..., 0], rb[..., 1]) < tol)[..., None], 0.0, rb)
        side = (ra[..., 0] * d[:, 1] - ra[..., 1] * d[:, 0]) / L
        side = np.where(np.abs(side) < tol, 0.0, side)
        proj = (ra * d).sum(-1) / L2
        sd = np.einsum("nk,nke->ne", lm, side)
        tau = np.einsum("nk,nke->ne", lm, proj)
        va = np.einsum("nk,nkej->nej", lm, ra)
        vb = np.einsum("nk,nkej->nej", lm, rb)
        dist = np.where(tau < 0, np.hypot(va[..., 0], va[..., 1]),
                        np.where(tau > 1, np.hypot(vb[..., 0], vb[..., 1]), np.abs(sd)))
        out[s:s + step] = dist.min(1)
    return out


def _density_values(comp, pts, anchors=None, lam=None):
    if isinstance(comp, Weighted):
        return comp.base.values(pts) * comp.weight(pts, anchors, lam)
    return comp.values(pts)


def _polar_full(comp, centers, radii, n_theta=32, n_rho=16):
    """Integral over full disks ``B(c, r)`` (assumed inside the domain)."""
    centers = np.atleast_2d(centers)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    xr, wr = _graded(n_rho, 1)
    e = np.column_stack([np.cos(th), np.sin(th)])
    out = np.empty(len(centers))
    step = max(1, 200000 // (n_theta * n_rho))
    for s in range(0, len(centers), step):
        c = centers[s:s + step]
        r = radii[s:s + step]
        rho = r[:, None] * xr[None, :]
        pts = c[:, None, None, :] + rho[:, None, :, None] * e[None, :, None, :]
        f = _density_values(comp, pts.reshape(-1, 2)).reshape(len(c), n_theta, n_rho)
        jac = (rho * r[:, None] * wr[None, :])[:, None, :] * (2 * np.pi / n_theta)
        out[s:s + step] = (f * jac).sum(axis=(1, 2))
    return out


def _ray_hits(center, dirs, edges):
    """Ray parameters where ``center + rho*dir`` crosses each edge (NaN if not)."""
    a = edges[:, 0] - center
    d = edges[:, 1] - edges[:, 0]
    den = dirs[:, 0:1] * d[None, :, 1] - dirs[:, 1:2] * d[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (a[None, :, 0] * d[None, :, 1] - a[None, :, 1] * d[None, :, 0]) / den
        s = (a[None, :, 0] * dirs[:, 1:2] - a[None, :, 1] * dirs[:, 0:1]) / den
    ok = (np.abs(den) > 1e-300) & (s >= 0) & (s <= 1) & (rho > 0)
    return np.where(ok, rho, np.nan)


def _polar_clipped(comp, center, r, domain, n_theta=16, n_rho=16):
    """Integral over ``domain`` intersected with ``B(center, r)``."""
    edges = domain.edges
    center = np.asarray(center, float)
    brk = [0.0, 2 * np.pi]
    v = np.concatenate(domain.rings) - center
    near = np.hypot(v[:, 0], v[:, 1]) < r
    brk.extend(np.mod(np.arctan2(v[near, 1], v[near, 0]), 2 * np.pi))
    a = edges[:, 0] - center
    d = edges[:, 1] - edges[:, 0]
    A = (d * d).sum(1)
    B = (a * d).sum(1)
    C = (a * a).sum(1) - r * r
    disc = B * B - A * C
    for sgn in (-1.0, 1.0):
        with np.errstate(invalid="ignore"):
            t = (-B + sgn * np.sqrt(np.where(disc > 0, disc, np.nan))) / A
        ok = (disc > 0) & (t >= 0) & (t <= 1)
        p = a[ok] + t[ok, None] * d[ok]
        brk.extend(np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi))
    brk = np.unique(np.round(np.asarray(brk), 15))
    m = _grading_for(comp.t) if isinstance(comp, Weighted) else 1
    if m > 8:
        # strong grading thins out the middle of each interval
        n_theta, n_rho = max(n_theta, 24), max(n_rho, 24)
    # the radial integral of a weight is singular in theta where the circle meets an edge
    xt, wt = _graded(n_theta, m)
    lo, hi = brk[:-1], brk[1:]
    keep = hi - lo > 1e-14
    lo, hi = lo[keep], hi[keep]
    th = (lo[:, None] + (hi - lo)[:, None] * xt[None, :]).ravel()
    wth = ((hi - lo)[:, None] * wt[None, :]).ravel()
    dirs = np.column_stack([np.cos(th), np.sin(th)])
    hits = _ray_hits(center, dirs, edges)
    hits = np.where(hits < r, hits, np.nan)
    knots = np.sort(np.concatenate([np.zeros((len(th), 1)), hits, np.full((len(th), 1), r)], axis=1), axis=1)
    knots = np.where(np.isnan(knots), r, knots)
    a_, b_ = knots[:, :-1], knots[:, 1:]
    mid = center + (0.5 * (a_ + b_))[..., None] * dirs[:, None, :]
    good = (b_ - a_ > 1e-15 * max(r, 1e-300))
    inside = np.zeros_like(good)
    if good.any():
        inside[good] = domain.contains(mid[good])
    if not inside.any():
        return 0.0
    xr, xc, wr = _graded_pair(n_rho, m)
    ai, bi = a_[inside], b_[inside]
    rows = np.nonzero(inside)[0]
    rho = ai[:, None] + (bi - ai)[:, None] * xr[None, :]
    pts = center + rho[..., None] * dirs[rows][:, None, :]
    anchors = lam = None
    if m > 1:
        ends = center + np.stack([ai, bi], 1)[..., None] * dirs[rows][:, None, :]
        anchors = np.repeat(ends, n_rho * 2, axis=0)
        lam = np.tile(np.column_stack([xc, xr]), (len(ai), 1))
    f = _density_values(comp, pts.reshape(-1, 2), anchors, lam).reshape(rho.shape)
    w = rho * (bi - ai)[:, None] * wr[None, :] * wth[rows][:, None]
    return float((f * w).sum())


def _seg_seg_distance(p0, p1, edges):
    """Minimum distance between the segment ``p0 p1`` and a set of edges."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    seg = np.array([[p0, p1]])
    d = min(segment_distances(edges.reshape(-1, 2), seg).min(),
            segment_distances(np.array([p0, p1]), edges).min())
    a, b = edges[:, 0], edges[:, 1]
    r, s = p1 - p0, b - a
    den = r[0] * s[:, 1] - r[1] * s[:, 0]
    qp = a - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
    if np.any((np.abs(den) > 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)):
        return 0.0
    return float(d)


def _chord(seg, center, r):
    """Parameter interval of the segment inside the open ball, or None."""
    a, b = np.asarray(seg.a, float), np.asarray(seg.b, float)
    d = b - a
    f = a - np.asarray(center, float)
    A, B, C = d @ d, f @ d, f @ f - r * r
    disc = B * B - A * C
    if disc <= 0 or A == 0:
        return None
    sq = math.sqrt(disc)
    s0, s1 = max((-B - sq) / A, 0.0), min((-B + sq) / A, 1.0)
    return (s0, s1) if s1 > s0 else None


def _segment_mass(seg, s0, s1):
    L = seg.length
    return L * (s1 - s0) * (seg.c0 + (seg.c1 - seg.c0) * 0.5 * (s0 + s1))


def _weighted_segment_mass(comp, s0, s1, n=24):
    seg = comp.base
    m = _grading_for(comp.t)
    n = n if m <= 8 else 32
    x, xc, w = _graded_pair(n, m)
    # the singularities sit on knots: crossings with gamma and the closest approach
    cuts = [s0, s1] + [c for c in _gamma_crossings(seg, comp.domain) if s0 < c < s1]
    probe = np.linspace(s0, s1, 65)
    dist = distance_to_gamma(comp.domain, seg.point(probe))
    k = int(np.argmin(dist))
    if 0 < k < len(probe) - 1:
        cuts.append(probe[k])
    cuts = np.unique(cuts)
    total = 0.0
    lam = np.column_stack([xc, x])
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        s = lo + (hi - lo) * x
        ends = seg.point(np.array([lo, hi]))
        vals = seg.density(s) * comp.weight(seg.point(s), np.broadcast_to(ends, (n * 2, 2, 2)), lam)
        total += float((vals * w).sum() * (hi - lo) * seg.length)
    return total


def _gamma_crossings(seg, domain):
    """Parameters in (0, 1) where the segment crosses a gamma edge."""
    a, b = np.asarray(seg.a, float), np.asarray(seg.b, float)
    e = domain.gamma_edges
    p, q = e[:, 0], e[:, 1]
    r, s = b - a, q - p
    den = r[0] * s[:, 1] - r[1] * s[:, 0]
    qp = p - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
    ok = (np.abs(den) > 1e-300) & (t > 0) & (t < 1) & (u >= 0) & (u <= 1)
    return list(t[ok])


def _diverges(comp, center, r):
    """Non-integrable distance weight inside the ball."""
    if not isinstance(comp, Weighted) or comp.t <= 0:
        return False
    gedges = comp.domain.gamma_edges
    if isinstance(comp.base, Segment):
        ch = _chord(comp.base, center, r)
        if ch is None:
            return False
        p0, p1 = comp.base.point(np.array(ch))
        touch = _seg_seg_distance(p0, p1, gedges) == 0.0
        if not touch:
            return False
        on_gamma = distance_to_gamma(comp.domain, comp.base.point(np.linspace(*ch, 9)))
        return comp.t >= 1 or bool(np.all(on_gamma[1:-1] == 0))
    return comp.t >= 1 and distance_to_gamma(comp.domain, np.asarray(center, float)) < r


def component_ball_mass(comp, center, r, domain):
    """Mass of one component on ``domain`` intersected with ``B(center, r)``."""
    if _diverges(comp, center, r):
        return math.inf
    if isinstance(comp, Atom):
        p = np.asarray(comp.point, float)
        return comp.mass if np.hypot(*(p - center)) < r else 0.0
    if isinstance(comp, Segment):
        ch = _chord(comp, center, r)
        return 0.0 if ch is None else _segment_mass(comp, *ch)
    if isinstance(comp, Weighted) and isinstance(comp.base, Segment):
        ch = _chord(comp.base, center, r)
        return 0.0 if ch is None else _weighted_segment_mass(comp, *ch)
    if isinstance(comp, Density) and comp.func is None:
        return comp.coef * float(circle_polygon_area(center, r, domain.edges)[0])
    full = domain.contains(np.asarray(center, float)[None])[0] and \
        domain.boundary_distance(np.asarray(center, float)[None])[0] >= r
    if full:
        return float(_polar_full(comp, np.asarray(center, float)[None], np.array([r]))[0])
    return _polar_clipped(comp, center, r, domain)


def ball_mass(charge, part, center, r, domain):
    """``|nu|(domain ∩ B(center, r))`` (or the positive/negative part)."""
    if not r > 0:
        raise LabError("bad-radius", "ball radius must be positive")
    center = np.asarray(center, float)
    total = 0.0
    for _, comp in charge.components(part):
        total += component_ball_mass(comp, center, r, domain)
    return total


def _batch_masses(charge, centers, radii, domain):
    """|nu|(Ω ∩ B) for many balls at once; exploits full-disk batching."""
    out = np.zeros(len(centers))
    if len(centers) == 0:
        return out
    inner = None
    for _, comp in charge.components("total"):
        if isinstance(comp, Density) and comp.func is None:
            out += comp.coef * circle_polygon_area(centers, radii, domain.edges)
            continue
        if isinstance(comp, (Density, Weighted)) and not isinstance(getattr(comp, "base", None), Segment):
            if inner is None:
                inner = domain.contains(centers) & (domain.boundary_distance(centers) >= radii)
            vals = np.empty(len(centers))
            if inner.any():
                vals[inner] = _polar_full(comp, centers[inner], radii[inner])
            for i in np.flatnonzero(~inner):
                vals[i] = component_ball_mass(comp, centers[i], radii[i], domain)
            out += vals
            continue
        out += np.array([component_ball_mass(comp, c, r, domain) for c, r in zip(centers, radii)])
    return out


# ------------------------------------------------------------ Morrey norm


def conjugate(q):
    if q == 1:
        return math.inf
    if math.isinf(q):
        return 1.0
    return q / (q - 1.0)


def morrey_exponent(q, n=N_DIM):
    """``n / q'``; the radius power in the Morrey quotient."""
    qp = conjugate(q)
    return 0.0 if math.isinf(qp) else n / qp


@dataclass
class ScanSpec:
    """Centers and dyadic radii ``diam * 2**-j`` (``j = 0..levels``)."""

    centers: np.ndarray = None
    levels: int = 10
    grid: int = 32
    normal_levels: int = 10

    def radii(self, diam):
        return diam * 2.0 ** -np.arange(self.levels + 1)


def default_centers(domain, charge=None, grid=32, normal_levels=10):
    """Grid points in the domain, inward offsets from gamma, and charge features."""
    x0, y0, x1, y1 = domain.bbox
    step = max(x1 - x0, y1 - y0) / grid
    xs = np.arange(x0, x1 + 0.5 * step, step)
    ys = np.arange(y0, y1 + 0.5 * step, step)
    X, Y = np.meshgrid(xs, ys)
    pts = [np.column_stack([X.ravel(), Y.ravel()])]
    edges = domain.gamma_edges if domain.gamma else domain.edges
    offs = domain.diam * 2.0 ** -np.arange(1, normal_levels + 1)
    for a, b in edges:
        d = b - a
        L = np.hypot(*d)
        nrm = np.array([-d[1], d[0]]) / L
        for frac in (0.25, 0.5, 0.75):
            base = a + frac * d
            for sgn in (1.0, -1.0):
                pts.append(base + sgn * offs[:, None] * nrm)
    if charge is not None:
        for _, c in charge.components("total"):
            c = c.base if isinstance(c, Weighted) else c
            if isinstance(c, Atom):
                pts.append(np.asarray(c.point, float)[None])
            elif isinstance(c, Segment):
                pts.append(c.point(np.linspace(0, 1, 9)))
    pts = np.concatenate(pts)
    pts = pts[domain.contains(pts)]
    return np.unique(np.round(pts, 14), axis=0)


@dataclass
class MorreyReport:
    q: float
    mode: str
    value: float
    witness: tuple
    samples: int
    skipped: int = 0
    divergent: bool = False
    per_level: list = field(default_factory=list)

    def csv_row(self):
        wx, wy, wr = self.witness if self.witness else (math.nan,) * 3
        return {"q": self.q, "mode": self.mode, "value": self.value, "witness_x": wx,
                "witness_y": wy, "witness_r": wr, "divergent": int(self.divergent)}


def morrey_csv(reports):
    buf = io.StringIO()
    cols = ["q", "mode", "value", "witness_x", "witness_y", "witness_r", "divergent"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def morrey_norm(charge, q, mode, domain, scan=None):
    """Sampled ``sup r**(-n/q') |nu|(Ω ∩ B(x, r))``.

    ``mode="global"`` scans every sampled radius; ``mode="floated"`` keeps only
    ``r < delta_gamma(x) / 2``.  Centers with no admissible radius are skipped
    and counted.  The divergence flag is raised by the analytic short-cuts for
    atoms, or when the per-level maxima still grow at the finest level faster
    than 5% per halving (a Morrey-bounded family has bounded per-level maxima).
    """
    if not q >= 1:
        raise LabError("bad-exponent", f"Morrey exponent q={q} must be >= 1")
    if mode not in ("global", "floated"):
        raise LabError("bad-mode", f"unknown Morrey mode {mode!r}")
    scan = ScanSpec() if scan is None else scan
    centers = scan.centers
    if centers is None:
        centers = default_centers(domain, charge, scan.grid, scan.normal_levels)
    centers = np.atleast_2d(np.asarray(centers, float))
    radii = scan.radii(domain.diam)
    expo = morrey_exponent(q)

    if mode == "floated":
        dg = distance_to_gamma(domain, centers)
        adm = radii[None, :] < 0.5 * dg[:, None]
    else:
        adm = np.ones((len(centers), len(radii)), dtype=bool)
    skipped = int((~adm.any(axis=1)).sum())
    ci, rj = np.nonzero(adm)
    if len(ci) == 0 or charge.is_zero:
        return MorreyReport(q, mode, 0.0, None, int(len(ci)), skipped)

    mass = _batch_masses(charge, centers[ci], radii[rj], domain)
    vals = radii[rj] ** (-expo) * mass
    k = int(np.argmax(vals))
    best = float(vals[k])
    witness = (float(centers[ci[k], 0]), float(centers[ci[k], 1]), float(radii[rj[k]]))

    per_level = []
    for j in range(len(radii)):
        sel = rj == j
        if sel.any():
            per_level.append((float(radii[j]), float(vals[sel].max())))

    divergent = math.isinf(best)
    if q > 1 and charge.has_atoms:
        divergent = True
    if len(per_level) >= 3 and not divergent:
        threshold = GROWTH_FACTOR
        v = [pv for _, pv in per_level[-3:]]
        if v[0] > 0 and v[1] > 0 and v[2] / v[1] > threshold and v[1] / v[0] > threshold:
            divergent = True
    return MorreyReport(q, mode, best, witness, int(len(ci)), skipped, divergent, per_level)


def morrey_quotient(charge, q, center, r, domain):
    """``r**(-n/q') |nu|(Ω ∩ B(center, r))`` for a single ball (witness replay)."""
    return r ** (-morrey_exponent(q)) * ball_mass(charge, "total", center, r, domain)


# -------------------------------------------------------------- classes


def beta_exponent(p, q, n=N_DIM):
    """``(p - n/q) / (p - 1)``; ``q = inf`` allowed."""
    if not 1 < p <= n:
        raise LabError("bad-exponent", f"need 1 < p <= n, got p={p}, n={n}")
    if q <= n / p:
        raise LabError("beta-nonpositive", f"q={q} must exceed n/p={n / p}")
    nq = 0.0 if math.isinf(q) else n / q
    return (p - nq) / (p - 1)


def distance_weight(charge, t, domain, n=N_DIM):
    """``delta_gamma**(-t) * charge`` with its declared class shifted.

    A charge of class ``q < inf`` moves to ``q n / (n + q t)``; Lebesgue-type
    ``q = inf`` moves to ``n / t``.  The weight must stay in the admissible
    range ``t <= n (q - 1) / q`` (``t <= n`` for ``q = inf``).
    """
    if charge.has_atoms:
        raise LabError("bad-charge", "distance weights do not apply to atoms")
    if t < 0:
        raise LabError("weight-out-of-range", "t must be nonnegative")
    if t == 0:
        return charge
    if not domain.gamma:
        raise LabError("gamma-empty", "distance weight needs a nonempty gamma")
    q = charge.q
    if q is not None:
        limit = n if math.isinf(q) else n * (q - 1) / q
        if t > limit + 1e-15:
            raise LabError("weight-out-of-range", f"t={t} exceeds {limit} for q={q}")
        q_new = n / t if math.isinf(q) else q * n / (n + q * t)
    else:
        q_new = None

    def wrap(c):
        return Weighted(c, t, domain, label=f"{c.label}*dist^-{t:g}")

    return RadonCharge(tuple(map(wrap, charge.positive)), tuple(map(wrap, charge.negative)), q_new)


# ----------------------------------------------------------- mesh loads


@dataclass
class ChargeQuadrature:
    """Quadrature of a charge against P1 functions on a mesh."""

    triangle: np.ndarray
    bary: np.ndarray
    weight: np.ndarray
    points: np.ndarray
    singular_nodes: np.ndarray = None

    def integrate(self, nodal):
        """``∫ u dnu`` for the P1 interpolant of ``nodal``."""
        return float(self.weight @ self.values(nodal))

    def values(self, nodal, triangles=None):
        v = np.asarray(nodal, float)
        return np.einsum("ij,ij->i", self.bary, v[self._tri_nodes])

    def bind(self, mesh):
        self._tri_nodes = mesh.triangles[self.triangle]
        return self


def _subdivide(tri_pts):
    """Split triangles ``(K, 3, 2)`` into four children each."""
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    kids = np.stack([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1),
    ], axis=1)
    return kids.reshape(-1, 3, 2)


def _duffy_rule(tris, m, n=None):
    """Tensor Gauss rule on triangles through the collapsed-square map.

    Both square directions are graded at both ends, so integrable
    singularities along any edge or at the collapsed vertex are resolved.
    """
    n = n or (12 if m <= 8 else 18)
    x, xc, w = _graded_pair(n, m)
    U, Wt = np.meshgrid(x, x, indexing="ij")
    Uc, Wc = np.meshgrid(xc, xc, indexing="ij")
    WU, WW = np.meshgrid(w, w, indexing="ij")
    U, Wt, Uc, Wc, WU, WW = (a.ravel() for a in (U, Wt, Uc, Wc, WU, WW))
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = v0[:, None] + U[None, :, None] * (Wc[None, :, None] * e1[:, None] + Wt[None, :, None] * e2[:, None])
    wts = area2[:, None] * (U * WU * WW)[None, :]
    # barycentric coordinates with exact complements, for _anchored_distance
    lam = np.tile(np.column_stack([Uc, U * Wc, U * Wt]), (len(tris), 1))
    anchors = np.repeat(tris, len(U), axis=0)
    return pts.reshape(-1, 2), wts.ravel(), len(U), anchors, lam


def _density_quadrature(comp, mesh, levels):
    tris = mesh.nodes[mesh.triangles]
    owner = np.arange(mesh.n_triangles)
    pts_all, w_all, own_all = [], [], []
    weighted = isinstance(comp, Weighted)
    duffy = None
    if weighted:
        dv = distance_to_gamma(comp.domain, tris.reshape(-1, 2)).reshape(-1, 3)
        touch = dv.min(1) <= 1e-12 * comp.domain.diam
        if touch.any():
            pts, w, k, anchors, lam = _duffy_rule(tris[touch], _grading_for(comp.t))
            duffy = (len(w), anchors, lam)
            pts_all.append(pts)
            w_all.append(w * _density_values(comp, pts, anchors, lam))
            own_all.append(np.repeat(owner[touch], k))
            tris, owner = tris[~touch], owner[~touch]
    for level in range(levels + 1):
        if weighted and level < levels and len(tris):
            diam = np.linalg.norm(tris[:, 0] - tris[:, 1], axis=1) + np.linalg.norm(tris[:, 1] - tris[:, 2], axis=1)
            dmin = distance_to_gamma(comp.domain, tris.reshape(-1, 2)).reshape(-1, 3).min(1)
            near = dmin < diam
        else:
            near = np.zeros(len(tris), dtype=bool)
        far = ~near
        if far.any():
            t = tris[far]
            pts = np.einsum("qk,tkj->tqj", TRI7_BARY, t)
            d1, d2 = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
            area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            pts_all.append(pts.reshape(-1, 2))
            w_all.append((area[:, None] * TRI7_W[None, :]).ravel())
            own_all.append(np.repeat(owner[far], 7))
        if not near.any():
            break
        tris = _subdivide(tris[near])
        owner = np.repeat(owner[near], 4)
    pts = np.concatenate(pts_all)
    w = np.concatenate(w_all)
    k = 0 if duffy is None else duffy[0]
    w[k:] = w[k:] * _density_values(comp, pts[k:])
    return np.concatenate(own_all), pts, w


def _segment_quadrature(comp, mesh, n_gauss=3):
    weighted = isinstance(comp, Weighted)
    seg = comp.base if weighted else comp
    a, b = np.asarray(seg.a, float), np.asarray(seg.b, float)
    e = mesh.edges
    p, q = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    r, s = b - a, q - p
    den = r[0] * s[:, 1] - r[1] * s[:, 0]
    qp = p - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
    ok = (np.abs(den) > 1e-300) & (t > 0) & (t < 1) & (u >= -1e-12) & (u <= 1 + 1e-12)
    knots = np.unique(np.concatenate([[0.0, 1.0], t[ok]]))
    knots = knots[np.concatenate([[True], np.diff(knots) > 1e-14])]
    if weighted:
        m = _grading_for(comp.t)
        x, xc, w = _graded_pair(max(n_gauss, 12 if m <= 8 else 18), m)
    else:
        x, w = _gauss(n_gauss)
    lo, hi = knots[:-1], knots[1:]
    sq = (lo[:, None] + (hi - lo)[:, None] * x[None, :]).ravel()
    wq = ((hi - lo)[:, None] * w[None, :]).ravel() * seg.length * seg.density(sq)
    pts = seg.point(sq)
    if weighted:
        ends = np.repeat(np.stack([seg.point(lo), seg.point(hi)], 1), len(x), axis=0)
        lam = np.tile(np.column_stack([xc, x]), (len(lo), 1))
        wq = wq * comp.weight(pts, ends, lam)
    return pts, wq


def charge_quadrature(charge, mesh, part="signed", levels=4):
    """Quadrature points/weights representing ``charge`` on ``mesh``.

    Densities use a 7-point degree-5 rule per triangle, with ``levels`` rounds
    of 1:4 subdivision for distance-weighted densities near gamma; segments
    are split at mesh edges; atoms are single points.
    """
    tri_l, pts_l, w_l = [], [], []
    singular = np.zeros(mesh.n_nodes, dtype=bool)
    for sign, comp in charge.components(part):
        if isinstance(comp, Weighted):
            if comp.t >= N_DIM:
                raise LabError("non-integrable-load", f"distance weight t={comp.t} >= {N_DIM}")
            if comp.t >= 1:
                singular |= mesh.on_gamma if comp.domain is not None else False
        if isinstance(comp, Atom):
            pts, w = np.asarray(comp.point, float)[None], np.array([comp.mass])
            tri = None
        elif isinstance(comp, Segment) or (isinstance(comp, Weighted) and isinstance(comp.base, Segment)):
            pts, w = _segment_quadrature(comp, mesh)
            tri = None
        else:
            tri, pts, w = _density_quadrature(comp, mesh, levels)
        if tri is None:
            tri, _ = mesh.locate(pts)
            if np.any(tri < 0):
                # points exactly on the outer boundary can miss the trifinder
                bad = tri < 0
                cent = mesh.centroids
                near = np.argmin(((pts[bad, None, :] - cent[None]) ** 2).sum(-1), axis=1)
                tri[bad] = near
        tri_l.append(tri)
        pts_l.append(pts)
        w_l.append(sign * w)
    if not tri_l:
        z = np.zeros(0)
        return ChargeQuadrature(np.zeros(0, int), np.zeros((0, 3)), z, np.zeros((0, 2)), singular).bind(mesh)
    tri = np.concatenate(tri_l)
    pts = np.concatenate(pts_l)
    w = np.concatenate(w_l)
    v = mesh.nodes[mesh.triangles[tri]]
    d1, d2, dp = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], pts - v[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * dp[:, 1] - d1[:, 1] * dp[:, 0]) / det
    bary = np.column_stack([1 - l1 - l2, l1, l2])
    return ChargeQuadrature(tri, bary, w, pts, singular).bind(mesh)


def project_load(charge, mesh, levels=4, keep=None):
    """Nodal loads ``∫ phi_i dnu`` for the P1 hat functions.

    Entries on gamma nodes are ``inf`` when a distance weight with ``t >= 1``
    makes them non-integrable; interior entries stay finite for ``t < 2``.
    ``keep`` (a callable on points) restricts the charge to a region by
    dropping quadrature points where it is false.
    """
    quad = charge_quadrature(charge, mesh, "signed", levels)
    w = quad.weight
    if keep is not None and len(w):
        w = np.where(keep(quad.points), w, 0.0)
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.triangles[quad.triangle].ravel(), (quad.bary * w[:, None]).ravel())
    singular = quad.singular_nodes
    if keep is not None:
        singular = singular & keep(mesh.nodes)
    load[singular] = np.inf
    return load
