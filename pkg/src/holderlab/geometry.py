"""Polygonal domains, exact distance to a boundary portion, triangulations.

A :class:`Domain2D` is a bounded polygon (outer ring plus optional holes)
together with a designated set of boundary edges ``gamma``.  Edges are
numbered globally: outer ring first (edge ``i`` joins vertex ``i`` to
``i + 1``), then each hole in order.

Meshes come from two generators.  Rectilinear domains whose vertices sit on
a grid of spacing ``target_h`` get a structured union-jack triangulation
(deterministic node order, x fastest).  Everything else goes through
Shewchuk's Triangle (constrained conforming Delaunay, min angle 28 degrees),
optionally graded towards ``gamma`` and with embedded polygons whose
boundaries become mesh edges.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import LabError

_CHUNK = 20000


def _ring(vertices):
    ring = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if len(ring) > 1 and np.allclose(ring[0], ring[-1]):
        ring = ring[:-1]
    return ring


def _signed_area(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _gamma_indices(spec, n_edges):
    if spec is None or (isinstance(spec, str) and spec == "all"):
        return frozenset(range(n_edges))
    if isinstance(spec, str) and spec == "none":
        return frozenset()
    idx = frozenset(int(i) for i in spec)
    if any(i < 0 or i >= n_edges for i in idx):
        raise LabError("bad-domain", f"gamma edge index out of range 0..{n_edges - 1}")
    return idx


def segment_distances(points, edges):
    """Distances from each point to each segment, shape ``(N, E)``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a = edges[:, 0]
    ab = edges[:, 1] - a
    len2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty((len(p), len(edges)))
    for s in range(0, len(p), _CHUNK):
        q = p[s:s + _CHUNK, None, :] - a[None]
        t = np.clip(np.einsum("nej,ej->ne", q, ab) / len2, 0.0, 1.0)
        d = q - t[..., None] * ab[None]
        out[s:s + _CHUNK] = np.sqrt(np.einsum("nej,nej->ne", d, d))
    return out


def _min_distance(points, edges):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if len(edges) == 0:
        return np.full(len(p), np.inf)
    out = np.empty(len(p))
    for s in range(0, len(p), _CHUNK):
        out[s:s + _CHUNK] = segment_distances(p[s:s + _CHUNK], edges).min(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class Domain2D:
    """Bounded polygon with holes and a closed boundary portion ``gamma``."""

    outer: np.ndarray
    holes: tuple = ()
    gamma: frozenset = frozenset()

    def __post_init__(self):
        outer = _ring(self.outer)
        holes = tuple(_ring(h) for h in self.holes)
        if len(outer) < 3 or any(len(h) < 3 for h in holes):
            raise LabError("bad-domain", "rings need at least three vertices")
        if _signed_area(outer) < 0:
            outer = outer[::-1].copy()
        holes = tuple(h[::-1].copy() if _signed_area(h) > 0 else h for h in holes)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "holes", holes)
        poly = self.to_shapely()
        if not poly.is_valid or poly.area <= 0:
            raise LabError("bad-domain", "boundary rings must be simple and bound a positive area")
        n_edges = sum(len(r) for r in self.rings)
        if isinstance(self.gamma, (frozenset, set)):
            gamma = frozenset(self.gamma)
            if any(i < 0 or i >= n_edges for i in gamma):
                raise LabError("bad-domain", "gamma edge index out of range")
        else:
            gamma = _gamma_indices(self.gamma, n_edges)
        object.__setattr__(self, "gamma", gamma)

    @property
    def rings(self):
        return (self.outer,) + self.holes

    @cached_property
    def edges(self):
        segs = [np.stack([r, np.roll(r, -1, axis=0)], axis=1) for r in self.rings]
        return np.concatenate(segs, axis=0)

    @cached_property
    def gamma_edges(self):
        return self.edges[sorted(self.gamma)]

    @cached_property
    def diam(self):
        v = self.outer
        d = np.sqrt(((v[:, None, :] - v[None, :, :]) ** 2).sum(-1))
        return float(d.max())

    @cached_property
    def area(self):
        return _signed_area(self.outer) + sum(_signed_area(h) for h in self.holes)

    @property
    def bbox(self):
        return (*self.outer.min(axis=0), *self.outer.max(axis=0))

    @property
    def is_rectilinear(self):
        e = self.edges
        d = e[:, 1] - e[:, 0]
        return bool(np.all((np.abs(d[:, 0]) < 1e-14) | (np.abs(d[:, 1]) < 1e-14)))

    def with_gamma(self, gamma):
        return Domain2D(self.outer, self.holes, gamma)

    def to_shapely(self):
        from shapely.geometry import Polygon

        return Polygon(self.outer, [h for h in self.holes])

    def boundary_distance(self, points):
        return _min_distance(points, self.edges)

    def contains(self, points, closed=False, tol=None):
        """Even-odd membership test; ``closed=True`` also accepts boundary points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        e = self.edges
        inside = np.zeros(len(p), dtype=bool)
        for s in range(0, len(p), _CHUNK):
            x = p[s:s + _CHUNK, 0:1]
            y = p[s:s + _CHUNK, 1:2]
            ya, yb = e[None, :, 0, 1], e[None, :, 1, 1]
            xa, xb = e[None, :, 0, 0], e[None, :, 1, 0]
            straddle = (ya > y) != (yb > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = xa + (y - ya) * (xb - xa) / (yb - ya)
            hits = straddle & (x < xcross)
            inside[s:s + _CHUNK] = hits.sum(axis=1) % 2 == 1
        if closed:
            tol = 1e-10 * self.diam if tol is None else tol
            inside |= self.boundary_distance(p) <= tol
        return inside


def polygon(vertices, holes=(), gamma="all"):
    return Domain2D(np.asarray(vertices, dtype=float), tuple(holes), gamma)


def rectangle(x0, y0, x1, y1, gamma="all"):
    return polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], gamma=gamma)


def unit_square(gamma="all"):
    return rectangle(0.0, 0.0, 1.0, 1.0, gamma=gamma)


def l_shape(gamma="all"):
    """Unit square with the upper-right quadrant removed."""
    verts = [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)]
    return polygon(verts, gamma=gamma)


def regular_polygon_vertices(center, radius, n, circumscribed=False, phase=0.0):
    r = radius / np.cos(np.pi / n) if circumscribed else radius
    ang = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)])


def disk(center=(0.0, 0.0), radius=1.0, n=256, circumscribed=False, gamma="all"):
    """Regular ``n``-gon approximating a disk; inscribed unless ``circumscribed``."""
    return polygon(regular_polygon_vertices(center, radius, n, circumscribed), gamma=gamma)


def from_shapely(poly, gamma="all"):
    holes = tuple(np.asarray(r.coords) for r in poly.interiors)
    return polygon(np.asarray(poly.exterior.coords), holes, gamma)


def distance_to_gamma(domain, x):
    """Euclidean distance from ``x`` (one point or an ``(N, 2)`` array) to gamma."""
    if not domain.gamma:
        raise LabError("gamma-empty", "distance to an empty boundary portion")
    x = np.asarray(x, dtype=float)
    d = _min_distance(x.reshape(-1, 2), domain.gamma_edges)
    return float(d[0]) if x.ndim == 1 else d


# ---------------------------------------------------------------- meshes


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming P1 triangulation; ``boundary``/``on_gamma`` are node flags."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    on_gamma: np.ndarray

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def boundary_nodes(self):
        return np.flatnonzero(self.boundary)

    @property
    def interior_nodes(self):
        return np.flatnonzero(~self.boundary)

    @cached_property
    def edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def h(self):
        e = self.edges
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).max())

    @cached_property
    def areas(self):
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self):
        """Gradients of the three hat functions on each triangle, ``(T, 3, 2)``."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        twice = 2.0 * self.areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([gx, gy], axis=2) / twice[:, None, None]

    @cached_property
    def gradient_operator(self):
        """Sparse ``(2T, N)`` map from nodal values to stacked triangle gradients."""
        T = self.n_triangles
        g = self.basis_gradients
        rows = np.stack([np.repeat(2 * np.arange(T)[:, None], 3, 1),
                         np.repeat(2 * np.arange(T)[:, None] + 1, 3, 1)], axis=2)
        cols = np.repeat(self.triangles[:, :, None], 2, axis=2)
        return sp.csr_matrix((g.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * T, self.n_nodes))

    def gradients(self, values):
        return (self.gradient_operator @ np.asarray(values, dtype=float)).reshape(-1, 2)

    def stiffness(self, coef=None):
        w = self.areas if coef is None else self.areas * coef
        G = self.gradient_operator
        return (G.T @ sp.diags(np.repeat(w, 2)) @ G).tocsr()

    def lumped_mass(self):
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return m

    @cached_property
    def _trifinder(self):
        import matplotlib.tri as mtri

        tri = mtri.Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)
        return tri.get_trifinder()

    def locate(self, points):
        """Containing triangle (``-1`` outside) and barycentric coordinates."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        tri = np.asarray(self._trifinder(p[:, 0], p[:, 1]), dtype=int)
        bary = np.full((len(p), 3), np.nan)
        ok = tri >= 0
        if ok.any():
            v = self.nodes[self.triangles[tri[ok]]]
            d1, d2, dp = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], p[ok] - v[:, 0]
            det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            l1 = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / det
            l2 = (d1[:, 0] * dp[:, 1] - d1[:, 1] * dp[:, 0]) / det
            bary[ok] = np.column_stack([1 - l1 - l2, l1, l2])
        return tri, bary

    def evaluate(self, values, points):
        """P1 interpolant at arbitrary points; NaN outside the mesh."""
        tri, bary = self.locate(points)
        out = np.full(len(tri), np.nan)
        ok = tri >= 0
        out[ok] = np.einsum("ij,ij->i", bary[ok], np.asarray(values)[self.triangles[tri[ok]]])
        return out


def _finalize(domain, nodes, triangles):
    p = nodes[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    triangles = np.where((det < 0)[:, None], triangles[:, [0, 2, 1]], triangles)
    tol = 1e-10 * domain.diam
    boundary = domain.boundary_distance(nodes) <= tol
    if domain.gamma:
        on_gamma = boundary & (_min_distance(nodes, domain.gamma_edges) <= tol)
    else:
        on_gamma = np.zeros(len(nodes), dtype=bool)
    mesh = TriMesh(nodes, triangles.astype(np.int64), boundary, on_gamma)
    if np.any(mesh.areas <= 0):
        raise LabError("bad-domain", "mesh generation produced a degenerate triangle")
    return mesh


def _on_grid(domain, h):
    x0, y0 = domain.bbox[:2]
    v = np.concatenate(domain.rings)
    k = (v - [x0, y0]) / h
    return np.allclose(k, np.round(k), atol=1e-9)


def _structured_mesh(domain, h):
    x0, y0, x1, y1 = domain.bbox
    nx, ny = int(round((x1 - x0) / h)), int(round((y1 - y0) / h))
    xs, ys = x0 + h * np.arange(nx + 1), y0 + h * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    centers = np.column_stack([x0 + (I + 0.5) * h, y0 + (J + 0.5) * h])
    keep = domain.contains(centers)
    I, J = I[keep], J[keep]
    n00 = J * (nx + 1) + I
    n10, n01, n11 = n00 + 1, n00 + nx + 1, n00 + nx + 2
    # alternate the diagonal in a checkerboard (union-jack pattern)
    even = ((I + J) % 2 == 0)[:, None]
    tris = np.empty((2 * len(I), 3), dtype=np.int64)
    tris[0::2] = np.where(even, np.column_stack([n00, n10, n11]), np.column_stack([n00, n10, n01]))
    tris[1::2] = np.where(even, np.column_stack([n00, n11, n01]), np.column_stack([n10, n11, n01]))
    used = np.unique(tris)
    renum = -np.ones(len(nodes), dtype=np.int64)
    renum[used] = np.arange(len(used))
    return _finalize(domain, nodes[used], renum[tris])


def _split_ring(ring, h, closed=True):
    pts = []
    n = len(ring)
    stop = n if closed else n - 1
    for i in range(stop):
        a, b = ring[i], ring[(i + 1) % n]
        k = max(1, int(np.ceil(np.linalg.norm(b - a) / h - 1e-9)))
        t = np.arange(k)[:, None] / k
        pts.append(a + t * (b - a))
    if not closed:
        pts.append(ring[-1:])
    return np.concatenate(pts)


def _embedded_rings(obj):
    """Closed rings from an array or a shapely (Multi)Polygon."""
    if hasattr(obj, "geoms"):
        out = []
        for g in obj.geoms:
            out.extend(_embedded_rings(g))
        return out
    if hasattr(obj, "exterior"):
        rings = [np.asarray(obj.exterior.coords)] + [np.asarray(r.coords) for r in obj.interiors]
        return [_ring(r) for r in rings]
    return [_ring(obj)]


class _PSLG:
    def __init__(self, scale):
        self.key_scale = 1e-11 * scale
        self.index = {}
        self.vertices = []
        self.segments = []

    def add(self, p):
        key = (round(p[0] / self.key_scale), round(p[1] / self.key_scale))
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append((float(p[0]), float(p[1])))
        return self.index[key]

    def ring(self, pts):
        ids = [self.add(p) for p in pts]
        for a, b in zip(ids, ids[1:] + ids[:1]):
            if a != b:
                self.segments.append((a, b))


def _triangle_mesh(domain, target_h, embed, points, grade):
    import triangle

    pslg = _PSLG(domain.diam)
    for r in domain.rings:
        pslg.ring(_split_ring(r, target_h))
    for obj in embed:
        for r in _embedded_rings(obj):
            pslg.ring(_split_ring(r, target_h))
    for p in np.asarray(points, dtype=float).reshape(-1, 2):
        pslg.add(p)
    data = {"vertices": np.array(pslg.vertices), "segments": np.array(pslg.segments, dtype=np.int32)}
    if domain.holes:
        from shapely.geometry import Polygon

        data["holes"] = np.array([Polygon(h).representative_point().coords[0] for h in domain.holes])
    amax = np.sqrt(3) / 4 * target_h ** 2
    out = triangle.triangulate(data, f"pq28a{amax:.17g}Q")
    if grade is not None:
        rate, h_min = grade
        for _ in range(60):
            verts, tris = out["vertices"], out["triangles"]
            c = verts[tris].mean(axis=1)
            size = np.clip(rate * distance_to_gamma(domain, c), h_min, target_h)
            limit = np.sqrt(3) / 4 * size ** 2
            p = verts[tris]
            d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
            area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            if np.all(area <= 1.05 * limit):
                break
            out["triangle_max_area"] = limit
            out = triangle.triangulate(out, "rpq28aQ")
    return _finalize(domain, np.asarray(out["vertices"], dtype=float), np.asarray(out["triangles"]))


def build_mesh(domain, target_h, embed=(), points=(), grade=None):
    """Triangulate ``domain`` with mesh size about ``target_h``.

    ``embed`` lists polygons (vertex arrays or shapely polygons) whose
    boundaries must appear as mesh edges; ``points`` are forced nodes;
    ``grade=(rate, h_min)`` refines towards gamma with local size
    ``clip(rate * delta_gamma, h_min, target_h)``.
    """
    if not target_h > 0:
        raise LabError("bad-domain", "target_h must be positive")
    structured = (domain.is_rectilinear and not len(embed) and not len(points)
                  and grade is None and _on_grid(domain, target_h))
    if structured:
        return _structured_mesh(domain, target_h)
    return _triangle_mesh(domain, target_h, embed, points, grade)


# ---------------------------------------------------------- text format


def parse_domain(text):
    """Read the plain-text domain format (see README)."""
    section, outer, holes, gamma = None, [], [], "all"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        head = words[0].lower()
        if head == "vertices":
            section = outer
        elif head == "hole":
            holes.append([])
            section = holes[-1]
        elif head == "gamma":
            rest = words[1:]
            if rest in (["all"], ["none"]):
                gamma = rest[0]
            else:
                try:
                    gamma = [int(w) for w in rest]
                except ValueError:
                    raise LabError("bad-domain", f"line {lineno}: gamma expects edge indices") from None
        elif section is not None and len(words) == 2:
            try:
                section.append((float(words[0]), float(words[1])))
            except ValueError:
                raise LabError("bad-domain", f"line {lineno}: expected two numbers") from None
        else:
            raise LabError("bad-domain", f"line {lineno}: cannot parse {raw!r}")
    return polygon(outer, [np.asarray(h) for h in holes], gamma)


def read_domain(path):
    with open(path) as fh:
        return parse_domain(fh.read())


def format_domain(domain):
    lines = ["vertices"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in domain.outer]
    for h in domain.holes:
        lines.append("hole")
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in h]
    n_edges = len(domain.edges)
    if domain.gamma == frozenset(range(n_edges)):
        lines.append("gamma all")
    elif not domain.gamma:
        lines.append("gamma none")
    else:
        lines.append("gamma " + " ".join(str(i) for i in sorted(domain.gamma)))
    return "\n".join(lines) + "\n"
