"""Shell-and-patch barrier comparable to ``delta_gamma**beta0``.

Shell ``k`` uses balls ``B(xi_j, R_k)`` with ``R_k = diam * theta**k`` and
centers ``xi_j`` on gamma.  On each ``Omega ∩ B`` we solve the Dirichlet
problem with data ``eta`` (a smoothstep in ``|x - xi|`` from
``(theta R_k / diam)**beta0 / 4`` inside ``B/2`` to ``(R_k / diam)**beta0`` on
``dB``) and the load restricted to ``delta_gamma > R_{k+2}``.  The shell
function ``v_k`` is the minimum of the local solutions on the union of the
balls and ``theta**(k beta0)`` elsewhere in ``{delta <= R_k}``; the barrier is
``s = min_k v_k`` over the shells containing a point.

The charge is first scaled into the small-norm regime and the result is
scaled back with the homogeneity of the p-Laplacian, so only the plain
p-Laplacian is accepted.

Each ball gets its own mesh, built in coordinates normalized by ``(xi, R)``.
Balls whose normalized geometry (the domain piece and gamma within ``2R``)
coincides share one solve when the charge is translation invariant, which
is what makes deep shells affordable.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import MultiLineString, Polygon

from .errors import LabError
from .geometry import build_mesh, distance_to_gamma, from_shapely, regular_polygon_vertices
from .measures import Density, Weighted, beta_exponent, morrey_norm, project_load
from .solver import PEnergy, ScalarField, SolveConfig, minimize_energy, supersolution_residual

BALL_SIDES = 96


@dataclass(frozen=True)
class BarrierConfig:
    theta: float = 0.25
    beta0: float = 0.25
    k_min: int = 0
    k_max: int = None
    covering_overlap: float = 1.5
    resolution: int = 12
    C3: float = 1.0

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise LabError("bad-config", "theta must lie in (0, 1)")
        if not 0 < self.beta0 <= 1:
            raise LabError("bad-config", "beta0 must lie in (0, 1]")
        if self.k_max is not None and not self.k_min < self.k_max:
            raise LabError("bad-config", "need k_min < k_max")
        if self.covering_overlap < 1:
            raise LabError("bad-config", "covering_overlap must be >= 1")

    @property
    def proof_regime(self):
        """Whether ``theta**beta0 < 1/8``, the ordering used in the patching step."""
        return self.theta ** self.beta0 < 0.125


# ----------------------------------------------------------- local solves


def eta_values(points, xi, R, theta, beta0, ell):
    """Smoothstep boundary data between the two plateau values."""
    lo = 0.25 * (theta * R / ell) ** beta0
    hi = (R / ell) ** beta0
    t = np.clip((np.hypot(points[:, 0] - xi[0], points[:, 1] - xi[1]) - 0.5 * R) / (0.5 * R), 0.0, 1.0)
    return lo + (hi - lo) * t * t * (3.0 - 2.0 * t)


def _normalized_rings(geom, xi, R):
    polys = getattr(geom, "geoms", [geom])
    out = []
    for poly in polys:
        if poly.geom_type != "Polygon" or poly.is_empty:
            continue
        rings = []
        for r in [poly.exterior, *poly.interiors]:
            c = (np.asarray(r.coords)[:-1] - xi) / R
            k = int(np.lexsort((c[:, 1], c[:, 0]))[0])
            rings.append(np.roll(c, -k, axis=0))
        out.append(rings)
    return out


def _signature(rings, gamma_clip, xi, R):
    key = []
    for part in rings:
        key.append(tuple(tuple(np.round(r, 9).ravel()) for r in part))
    segs = []
    for line in getattr(gamma_clip, "geoms", [gamma_clip]):
        if line.is_empty:
            continue
        c = np.round((np.asarray(line.coords) - xi) / R, 9)
        a, b = tuple(c[0]), tuple(c[-1])
        segs.append(min(a, b) + max(a, b))
    return tuple(sorted(key)), tuple(sorted(segs))


def _translation_invariant(charge):
    for _, c in charge.components("total"):
        base = c.base if isinstance(c, Weighted) else c
        if not (isinstance(base, Density) and base.func is None):
            return False
    return True


@dataclass
class LocalPiece:
    """A solved local problem in normalized coordinates."""

    meshes: list
    values: list
    bounds_ok: bool
    inner_ok: bool
    lower: float
    upper: float
    inner_max: float
    residual: float


def _solve_piece(domain, xi, R, charge, theta, beta0, ell, cut, p, resolution, cfg, rings):
    meshes, values = [], []
    lo = 0.25 * (theta * R / ell) ** beta0
    hi = (R / ell) ** beta0
    lower, upper, inner = math.inf, -math.inf, -math.inf
    residual = 0.0
    for part in rings:
        local = from_shapely(Polygon(part[0], part[1:]), gamma="none")
        nmesh = build_mesh(local, 1.0 / resolution)
        phys = type(nmesh)(xi + R * nmesh.nodes, nmesh.triangles, nmesh.boundary, nmesh.on_gamma)
        keep = (lambda pts: distance_to_gamma(domain, pts) > cut) if cut > 0 else None
        load = project_load(charge, phys, keep=keep) if not charge.is_zero else np.zeros(phys.n_nodes)
        free = ~phys.boundary
        u0 = np.where(free, 0.0, eta_values(phys.nodes, xi, R, theta, beta0, ell))
        energy = PEnergy(phys, p, None, np.where(free, load, 0.0))
        u, info = minimize_energy(energy, u0, free, cfg, label="auxiliary")
        residual = max(residual, info["residual"])
        meshes.append(nmesh)
        values.append(u)
        lower, upper = min(lower, u.min()), max(upper, u.max())
        near = np.hypot(*(phys.nodes - xi).T) < 2 * theta * R
        if near.any():
            inner = max(inner, u[near].max())
    tol = 1e-9 * hi
    bounds_ok = lower >= lo - tol and upper <= 2 * hi + tol
    inner_ok = inner <= 2 * lo + tol
    return LocalPiece(meshes, values, bounds_ok, inner_ok, lower, upper, inner, residual)


def _ball_rings(omega, xi, R):
    ball = Polygon(regular_polygon_vertices(xi, R, BALL_SIDES))
    return _normalized_rings(omega.intersection(ball), np.asarray(xi, float), R)


def auxiliary_solution(domain, xi, R, charge, theta=0.25, beta0=0.25, p=2.0, ell=None,
                       cut=0.0, resolution=12, cfg=None, strict=True):
    """Local solve on ``Omega ∩ B(xi, R)`` with data ``eta`` and the a posteriori checks.

    Returns a :class:`ScalarField` on the (physical) local mesh; the metadata
    records the bounds ``lower/upper`` against ``(theta R)**beta0 / 4`` and
    ``2 R**beta0`` (normalized by ``ell = diam``) and the maximum over
    ``Omega ∩ B(xi, 2 theta R)`` against ``(theta R)**beta0 / 2``.  With
    ``strict`` a failed bound raises ``"lemma32-violated"``.
    """
    xi = np.asarray(xi, float)
    if distance_to_gamma(domain, xi) > 1e-9 * domain.diam:
        raise LabError("bad-center", "ball centers must lie on gamma")
    ell = domain.diam if ell is None else ell
    cfg = SolveConfig() if cfg is None else cfg
    rings = _ball_rings(domain.to_shapely(), xi, R)
    if len(rings) != 1:
        raise LabError("bad-domain", "Omega ∩ B must be connected for a single field")
    piece = _solve_piece(domain, xi, R, charge, theta, beta0, ell, cut, p, resolution, cfg, rings)
    nmesh = piece.meshes[0]
    phys = type(nmesh)(xi + R * nmesh.nodes, nmesh.triangles, nmesh.boundary, nmesh.on_gamma)
    lo = 0.25 * (theta * R / ell) ** beta0
    meta = {"lower": piece.lower, "upper": piece.upper, "inner_max": piece.inner_max,
            "lower_bound": lo, "upper_bound": 2 * (R / ell) ** beta0, "inner_bound": 2 * lo,
            "bounds_ok": piece.bounds_ok, "inner_ok": piece.inner_ok, "residual": piece.residual}
    if strict and not (piece.bounds_ok and piece.inner_ok):
        u = piece.values[0]
        bad = int(np.argmax(u)) if not piece.inner_ok or piece.upper > meta["upper_bound"] else int(np.argmin(u))
        raise LabError("lemma32-violated", f"bounds fail at node {bad} ({phys.nodes[bad]})", node=bad, **meta)
    return ScalarField(phys, piece.values[0], meta)


# ---------------------------------------------------------------- shells


def shell_centers(domain, R, theta, overlap):
    """Centers on gamma, spaced so that the balls ``B(xi, 2 theta R)`` cover
    ``{delta <= theta R}``."""
    spacing = 2 * math.sqrt(3) * theta * R / overlap
    pts = []
    for a, b in domain.gamma_edges:
        L = float(np.hypot(*(b - a)))
        n = max(1, math.ceil(L / spacing))
        t = np.linspace(0.0, 1.0, n + 1)
        pts.append(a + t[:, None] * (b - a))
    pts = np.concatenate(pts)
    return np.unique(np.round(pts, 13), axis=0)


@dataclass
class ShellData:
    k: int
    R: float
    centers: np.ndarray
    local_solves: int
    bounds_failures: int
    inner_failures: int
    worst_upper_ratio: float
    worst_inner_ratio: float


@dataclass
class BarrierResult:
    s: ScalarField
    shells: list
    bound_constant: float
    spread: float
    slope: float
    band: tuple
    rescale: float
    norm: float
    beta: float
    patch_violations: int
    band_residuals: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    shell_values: dict = field(default_factory=dict)

    def csv(self, domain, beta0):
        nodes = self.s.mesh.nodes
        d = distance_to_gamma(domain, nodes)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, self.s.values / d ** beta0, np.nan)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "delta", "s", "s_over_delta_beta0"])
        for (x, y), di, si, ri in zip(nodes, d, self.s.values, ratio):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(di)), repr(float(si)), repr(float(ri))])
        return buf.getvalue()

    def shells_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "R", "xi_x", "xi_y"])
        for sh in self.shells:
            for x, y in sh.centers:
                w.writerow([sh.k, repr(sh.R), repr(float(x)), repr(float(y))])
        return buf.getvalue()


def default_k_max(domain, mesh, theta):
    """Largest ``k`` with ``diam * theta**k >= 4 h_gamma`` (``h_gamma``: the
    smallest edge touching gamma)."""
    e = mesh.edges
    touch = mesh.on_gamma[e[:, 0]] | mesh.on_gamma[e[:, 1]]
    lengths = np.linalg.norm(mesh.nodes[e[:, 0]] - mesh.nodes[e[:, 1]], axis=1)
    h = float(lengths[touch].min()) if touch.any() else mesh.h
    return max(1, int(math.floor(math.log(4 * h / domain.diam) / math.log(theta))))


def build_barrier(domain, charge, op, cfg, mesh, q=None, norm=None, rescale=None, solve_cfg=None):
    """Barrier sampled at the nodes of ``mesh``.

    ``q`` defaults to the charge's declared class; ``norm`` (the floated
    Morrey norm) is scanned when not given.  ``rescale`` overrides the
    automatic factor ``lambda`` that puts ``lambda * nu`` in the small-norm
    regime ``(lambda |nu|)**(1/(p-1)) diam**beta <= theta**beta0 / (8 C3)``.
    Aborts with ``"lemma32-violated"`` when a local solve breaks the global
    bounds ``(theta R)**beta0 / 4 <= u <= 2 R**beta0``; the inner bound on
    ``B(xi, 2 theta R)`` is recorded per shell.
    """
    if op.kind != "p-laplacian":
        raise LabError("unsupported-operator", "the rescaling step needs the plain p-Laplacian")
    if not charge.is_nonnegative:
        raise LabError("bad-charge", "barriers need a nonnegative charge")
    if not domain.gamma:
        raise LabError("gamma-empty", "barrier needs a nonempty gamma")
    p = op.p
    solve_cfg = SolveConfig() if solve_cfg is None else solve_cfg
    ell = domain.diam
    theta, beta0 = cfg.theta, cfg.beta0
    notes = []
    if not cfg.proof_regime:
        notes.append(f"theta**beta0 = {theta ** beta0:.3g} >= 1/8: shell ordering is not guaranteed")

    q = charge.q if q is None else q
    if charge.is_zero:
        lam, beta, norm = 1.0, math.nan, 0.0
    else:
        if q is None:
            raise LabError("bad-charge", "Morrey class q is needed to scale the charge")
        beta = beta_exponent(p, q)
        if beta < beta0:
            notes.append(f"beta0={beta0} exceeds beta={beta:.3g}")
        if norm is None:
            rep = morrey_norm(charge, q, "floated", domain)
            if rep.divergent:
                raise LabError("divergent-norm", "charge has no finite floated Morrey norm")
            norm = rep.value
        lam = (theta ** beta0 / (8 * cfg.C3 * ell ** beta)) ** (p - 1) / norm if norm > 0 else 1.0
    if rescale is not None:
        lam = float(rescale)
    scaled = charge.scaled(lam) if not charge.is_zero else charge

    k_max = default_k_max(domain, mesh, theta) if cfg.k_max is None else cfg.k_max
    if k_max <= cfg.k_min:
        raise LabError("bad-config", "mesh too coarse for two shells")
    nodes = mesh.nodes
    delta = distance_to_gamma(domain, nodes)
    omega = domain.to_shapely()
    gamma_lines = MultiLineString([tuple(map(tuple, e)) for e in domain.gamma_edges])
    invariant = _translation_invariant(charge)
    cache = {}
    s = np.full(len(nodes), np.inf)
    shells, shell_values = [], {}
    tree = cKDTree(nodes)
    for k in range(cfg.k_min, k_max + 1):
        R = ell * theta ** k
        cut = ell * theta ** (k + 2)
        centers = shell_centers(domain, R, theta, cfg.covering_overlap)
        in_shell = delta <= R
        patched = np.full(len(nodes), np.inf)
        n_solves = n_bounds = n_inner = 0
        worst_up = worst_in = 0.0
        for xi in centers:
            rings = _ball_rings(omega, xi, R)
            if not rings:
                continue
            disk2 = Polygon(regular_polygon_vertices(xi, 2 * R, BALL_SIDES))
            sig = _signature(rings, gamma_lines.intersection(disk2), xi, R)
            key = (k, sig) if invariant else (k, sig, tuple(np.round(xi, 12)))
            piece = cache.get(key)
            if piece is None:
                piece = _solve_piece(domain, xi, R, scaled, theta, beta0, ell, cut, p,
                                     cfg.resolution, solve_cfg, rings)
                cache[key] = piece
                n_solves += 1
                lo = 0.25 * (theta * R / ell) ** beta0
                worst_up = max(worst_up, piece.upper / (2 * (R / ell) ** beta0))
                worst_in = max(worst_in, piece.inner_max / (2 * lo))
                n_bounds += not piece.bounds_ok
                n_inner += not piece.inner_ok
            idx = np.array(tree.query_ball_point(xi, R), dtype=int)
            if len(idx) == 0:
                continue
            y = (nodes[idx] - xi) / R
            for nm, vals in zip(piece.meshes, piece.values):
                val = nm.evaluate(vals, y)
                ok = ~np.isnan(val)
                patched[idx[ok]] = np.minimum(patched[idx[ok]], val[ok])
        vk = np.where(np.isfinite(patched), patched, theta ** (k * beta0))
        vk = np.where(in_shell, vk, np.nan)
        if n_bounds:
            raise LabError("lemma32-violated", f"shell k={k}: {n_bounds} local solves break the global bounds",
                           k=k, failures=n_bounds)
        shell_values[k] = vk
        s = np.where(in_shell, np.fmin(s, vk), s)
        shells.append(ShellData(k, R, centers, n_solves, n_bounds, n_inner, worst_up, worst_in))

    s = np.where(np.isinf(s), theta ** (cfg.k_min * beta0), s)
    s = np.where(delta <= 1e-12 * ell, 0.0, s)
    back = lam ** (-1.0 / (p - 1))
    s_field = ScalarField(mesh, back * s, {"rescale": lam})

    lo_band, hi_band = ell * theta ** k_max, ell * theta ** cfg.k_min
    band = (delta >= lo_band) & (delta <= hi_band) & (delta > 0)
    if np.any((delta > 0) & (delta < ell * theta ** (k_max + 1))):
        notes.append("truncated-shells")
        warnings.warn("truncated-shells: mesh nodes lie below the deepest shell", stacklevel=2)
    # two-sided constant relative to diam**(beta - beta0) |nu|**(1/(p-1)) delta**beta0
    ref = ell ** (beta - beta0) * norm ** (1.0 / (p - 1)) if norm > 0 else ell ** (-beta0)
    ratio = s_field.values[band] / (ref * delta[band] ** beta0)
    bound = float(max(ratio.max(), 1.0 / ratio.min()))
    spread = float(ratio.max() / ratio.min())
    slope = float(np.polyfit(np.log(delta[band]), np.log(s_field.values[band]), 1)[0])

    # patching order: v_k < v_k' on {delta <= R_k} whenever k' <= k - 2
    viol = 0
    for k, a in shell_values.items():
        for k2, b in shell_values.items():
            if k2 <= k - 2:
                sel = (delta <= ell * theta ** k) & (delta > 0)
                viol += int(np.sum(~(a[sel] < b[sel])))
    residuals = {}
    for k in shell_values:
        sel = (delta <= ell * theta ** k) & (delta > ell * theta ** (k + 1))
        if sel.any():
            residuals[k] = supersolution_residual(op, s_field, charge, mesh, nodes=np.flatnonzero(sel))
    return BarrierResult(s_field, shells, bound, spread, slope, (lo_band, hi_band), lam, norm, beta,
                         viol, residuals, notes, shell_values)
