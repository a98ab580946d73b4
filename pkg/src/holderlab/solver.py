"""Discrete Dirichlet problems for ``-div A(x, grad u) = nu`` on P1 meshes.

The built-in operators are of potential type, ``A(x, z) = a(x) |z|^(p-2) z``
with ``1 <= a <= L``, so a solve is the minimization of

    J(u) = sum_T area_T a_T (|grad u|^2 + eps^2)^(p/2) / p  -  load . u

over nodal vectors with prescribed boundary values.  ``J`` is smooth and
strictly convex for ``eps > 0``; it is minimized by damped Newton steps with
an Armijo backtracking line search while ``eps`` is lowered geometrically.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import LabError
from .measures import project_load

log = logging.getLogger("holderlab.solver")

KINDS = ("p-laplacian", "weighted", "general")


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """``A(x, z)`` with growth ``p`` and ellipticity ``L``.

    ``kind="weighted"`` uses ``a(x) |z|^(p-2) z`` with ``weight`` a vectorised
    callable on points.  ``kind="general"`` takes an arbitrary ``flux(x, z)``;
    it is accepted for the structure checks but cannot be solved.
    """

    p: float
    L: float = 1.0
    kind: str = "p-laplacian"
    weight: object = None
    flux_func: object = None

    def __post_init__(self):
        if not 1 < self.p <= 2:
            raise LabError("bad-exponent", f"need 1 < p <= 2, got {self.p}")
        if not self.L >= 1:
            raise LabError("bad-operator", f"need L >= 1, got {self.L}")
        if self.kind not in KINDS:
            raise LabError("bad-operator", f"unknown operator kind {self.kind!r}")
        if self.kind == "weighted" and self.weight is None:
            raise LabError("bad-operator", "weighted operator needs a weight function")
        if self.kind == "general" and self.flux_func is None:
            raise LabError("bad-operator", "general operator needs a flux function")

    @property
    def homogeneous(self):
        return self.kind != "general"

    def coefficients(self, mesh):
        """Per-triangle ``a`` evaluated at centroids (ones for the p-Laplacian)."""
        if self.kind == "p-laplacian":
            return np.ones(mesh.n_triangles)
        if self.kind == "general":
            raise LabError("unsupported-operator", "general operators have no scalar coefficient")
        a = np.asarray(self.weight(mesh.centroids), dtype=float)
        if np.any(a < 1) or np.any(a > self.L):
            raise LabError("bad-operator", f"weight must lie in [1, L={self.L}]")
        return a

    def flux(self, x, z):
        """``A(x, z)`` for points ``x`` and vectors ``z`` of shape ``(N, 2)``."""
        z = np.atleast_2d(np.asarray(z, float))
        if self.kind == "general":
            return np.asarray(self.flux_func(x, z), float)
        a = 1.0 if self.kind == "p-laplacian" else np.asarray(self.weight(np.atleast_2d(x)), float)[:, None]
        nz = np.linalg.norm(z, axis=1)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(nz > 0, nz ** (self.p - 2) * z, 0.0)
        return a * f


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a mesh plus solve metadata."""

    mesh: object
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise LabError("bad-field", f"expected {self.mesh.n_nodes} values, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def gradients(self):
        return self.mesh.gradients(self.values)

    def with_values(self, values, **metadata):
        return ScalarField(self.mesh, values, metadata)

    def __add__(self, c):
        return self.with_values(self.values + c)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    @property
    def max(self):
        return float(self.values.max())

    @property
    def min(self):
        return float(self.values.min())


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float = 1e-8
    tol_residual: float = 1e-10
    max_newton: int = 60
    continuation_steps: int = 7
    epsilon_start: float = 1e-2

    def __post_init__(self):
        if not self.epsilon > 0:
            raise LabError("bad-config", "epsilon must be positive")
        if not self.tol_residual > 0:
            raise LabError("bad-config", "tol_residual must be positive")
        if self.continuation_steps < 1 or self.max_newton < 1:
            raise LabError("bad-config", "continuation_steps and max_newton must be >= 1")

    def schedule(self):
        """Decreasing ``eps`` values ending at ``epsilon``."""
        start = max(self.epsilon_start, self.epsilon)
        if self.continuation_steps == 1 or start == self.epsilon:
            return [self.epsilon]
        return list(np.geomspace(start, self.epsilon, self.continuation_steps))

    def rescaled(self, s, p):
        """Config matching ``u -> s u``: eps scales by ``s``, residuals by ``s**(p-1)``."""
        return replace(self, epsilon=self.epsilon * s, epsilon_start=self.epsilon_start * s,
                       tol_residual=self.tol_residual * s ** (p - 1))


class PEnergy:
    """Regularized p-Dirichlet energy with linear load on a mesh."""

    def __init__(self, mesh, p, coef=None, load=None):
        self.mesh = mesh
        self.p = p
        self.weights = mesh.areas * (1.0 if coef is None else coef)
        self.load = np.zeros(mesh.n_nodes) if load is None else np.asarray(load, float)
        self.B = mesh.basis_gradients
        tri = mesh.triangles
        self._rows = np.repeat(tri, 3, axis=1).ravel()
        self._cols = np.tile(tri, (1, 3)).ravel()

    def grads(self, u):
        return np.einsum("tkj,tk->tj", self.B, u[self.mesh.triangles])

    def value(self, u, eps):
        g = self.grads(u)
        s2 = (g * g).sum(1) + eps * eps
        return float(self.weights @ s2 ** (0.5 * self.p)) / self.p - float(self.load @ u)

    def gradient(self, u, eps):
        g = self.grads(u)
        s2 = (g * g).sum(1) + eps * eps
        flux = (self.weights * s2 ** (0.5 * self.p - 1))[:, None] * g
        elem = np.einsum("tkj,tj->tk", self.B, flux)
        return np.bincount(self.mesh.triangles.ravel(), elem.ravel(), self.mesh.n_nodes) - self.load

    def hessian(self, u, eps):
        p = self.p
        g = self.grads(u)
        s2 = (g * g).sum(1) + eps * eps
        w = self.weights * s2 ** (0.5 * p - 1)
        c = self.weights * (p - 2) * s2 ** (0.5 * p - 2)
        BBt = np.einsum("tkj,tlj->tkl", self.B, self.B)
        Bg = np.einsum("tkj,tj->tk", self.B, g)
        elem = w[:, None, None] * BBt + c[:, None, None] * Bg[:, :, None] * Bg[:, None, :]
        n = self.mesh.n_nodes
        return sp.csr_matrix((elem.ravel(), (self._rows, self._cols)), shape=(n, n))


def spd_solve(A, b):
    """Sparse LU in symmetric mode (no pivoting) for SPD systems."""
    lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    return lu.solve(np.asarray(b, float))


def minimize_energy(energy, u0, free, cfg, label="solve"):
    """Damped Newton with eps-continuation; returns ``(u, info)``.

    ``free`` is a boolean node mask; other entries of ``u0`` stay fixed.
    Intermediate continuation stages are solved loosely, the last one to
    ``cfg.tol_residual`` on the max-norm of the reduced gradient.
    """
    u = np.array(u0, dtype=float)
    idx = np.flatnonzero(free)
    history = []
    total = 0
    if len(idx) == 0:
        return u, {"iterations": 0, "residual": 0.0, "energy": energy.value(u, cfg.epsilon),
                   "epsilon": cfg.epsilon, "energies": []}
    linear = energy.p == 2
    schedule = [cfg.epsilon] if linear else cfg.schedule()
    residual = math.inf
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        tol = cfg.tol_residual if last else cfg.tol_residual * 1e4
        cap = cfg.max_newton if last else max(5, cfg.max_newton // 3)
        J = energy.value(u, eps)
        history.append(J)
        for it in range(cap):
            grad = energy.gradient(u, eps)[idx]
            residual = float(np.abs(grad).max())
            if residual <= tol:
                break
            H = energy.hessian(u, eps)[idx][:, idx]
            d = -spd_solve(H, grad)
            slope = float(grad @ d)
            if not slope < 0:
                d, slope = -grad, -float(grad @ grad)
            alpha = 1.0
            trial = u.copy()
            for _ in range(60):
                trial[idx] = u[idx] + alpha * d
                Jt = energy.value(trial, eps)
                if Jt <= J + 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
            else:
                # no decrease at rounding level: the iterate is already optimal
                break
            u, J = trial, Jt
            history.append(J)
            total += 1
            log.info("%s newton eps=%.3e it=%d energy=%.17g residual=%.3e step=%.3g",
                     label, eps, it, J, residual, alpha)
        if last:
            residual = float(np.abs(energy.gradient(u, eps)[idx]).max())
    info = {"iterations": total, "residual": residual, "energy": history[-1],
            "epsilon": schedule[-1], "energies": history}
    if residual > cfg.tol_residual:
        raise LabError("solver-stall", f"{label}: residual {residual:.3e} > {cfg.tol_residual:.3e} "
                       f"after {total} Newton steps", **info)
    return u, info


def solve_dirichlet(op, charge, mesh, boundary_data=0.0, cfg=None, load=None, fixed=None):
    """Minimizer of the regularized energy with prescribed boundary values.

    ``boundary_data`` is a scalar, a full nodal vector (only boundary entries
    are used) or a callable on points.  ``load`` overrides the projection of
    ``charge``; ``fixed`` overrides the boundary mask.
    """
    cfg = SolveConfig() if cfg is None else cfg
    if not op.homogeneous:
        raise LabError("unsupported-operator", "only potential-type operators can be solved")
    coef = op.coefficients(mesh)
    if load is None:
        load = np.zeros(mesh.n_nodes) if charge is None else project_load(charge, mesh)
    fixed = mesh.boundary if fixed is None else np.asarray(fixed, bool)
    free = ~fixed
    if not np.all(np.isfinite(load[free])):
        raise LabError("non-integrable-load", "load is infinite at free nodes")
    u0 = np.zeros(mesh.n_nodes)
    if callable(boundary_data):
        bd = np.asarray(boundary_data(mesh.nodes), float)
    else:
        bd = np.broadcast_to(np.asarray(boundary_data, float), (mesh.n_nodes,))
    if not np.all(np.isfinite(bd[fixed])):
        raise LabError("bad-boundary", "boundary data must be finite")
    u0[fixed] = bd[fixed]
    energy = PEnergy(mesh, op.p, coef, np.where(free, load, 0.0))
    u, info = minimize_energy(energy, u0, free, cfg)
    info.update(p=op.p, kind=op.kind)
    return ScalarField(mesh, u, info)


def glue_min(u1, u2):
    """Nodal minimum of two fields on the same mesh."""
    if u1.mesh is not u2.mesh:
        raise LabError("mesh-mismatch", "fields live on different meshes")
    return ScalarField(u1.mesh, np.minimum(u1.values, u2.values), {"glued": True})


def supersolution_entries(op, field, charge, mesh=None, load=None):
    """``int A(x, grad u) . grad phi_i - int phi_i dnu`` for every node ``i``."""
    mesh = field.mesh if mesh is None else mesh
    if field.mesh is not mesh:
        raise LabError("mesh-mismatch", "field does not live on this mesh")
    if load is None:
        load = np.zeros(mesh.n_nodes) if charge is None else project_load(charge, mesh)
    g = field.gradients
    flux = op.flux(mesh.centroids, g) if op.kind == "general" else \
        op.coefficients(mesh)[:, None] * op.flux(mesh.centroids, g) if op.kind == "weighted" else op.flux(None, g)
    elem = np.einsum("tkj,tj->tk", mesh.basis_gradients, flux * mesh.areas[:, None])
    return np.bincount(mesh.triangles.ravel(), elem.ravel(), mesh.n_nodes) - load


def supersolution_residual(op, field, charge, mesh=None, nodes=None, load=None):
    """Minimum of :func:`supersolution_entries` over interior test nodes.

    ``nodes`` restricts the test functions (a boolean mask or index array);
    boundary nodes are always excluded.  A value ``>= -tol`` certifies a
    discrete supersolution against those test functions.
    """
    mesh = field.mesh if mesh is None else mesh
    r = supersolution_entries(op, field, charge, mesh, load)
    mask = ~mesh.boundary
    if nodes is not None:
        sel = np.zeros(mesh.n_nodes, bool)
        sel[nodes] = True
        mask &= sel
    if not mask.any():
        return math.inf
    return float(r[mask].min())


def comparison_check(u, v, tol=0.0):
    """``(u <= v + tol at every node, max(u - v))``."""
    if u.mesh is not v.mesh:
        raise LabError("mesh-mismatch", "fields live on different meshes")
    viol = float(np.max(u.values - v.values))
    return viol <= tol, viol


def homogeneity_check(op, charge, mesh, t, cfg=None):
    """``max |solve(t nu) - t**(1/(p-1)) solve(nu)|`` with matched regularization."""
    if op.kind != "p-laplacian":
        raise LabError("unsupported-operator", "homogeneity needs the plain p-Laplacian")
    cfg = SolveConfig() if cfg is None else cfg
    if t == 1:
        return 0.0
    s = t ** (1.0 / (op.p - 1))
    u = solve_dirichlet(op, charge, mesh, 0.0, cfg)
    ut = solve_dirichlet(op, charge.scaled(t), mesh, 0.0, cfg.rescaled(s, op.p))
    return float(np.abs(ut.values - s * u.values).max())


# ------------------------------------------------------------------ output


def field_csv(field):
    """CSV text with columns ``x, y, value``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "value"])
    for (x, y), v in zip(field.mesh.nodes, field.values):
        w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    return buf.getvalue()


def format_field(field):
    """Plain-text field: a header, then one ``x y value`` line per node."""
    lines = ["# holderlab field v1", f"nodes {field.mesh.n_nodes}"]
    for key in ("residual", "energy", "iterations", "epsilon"):
        if key in field.metadata:
            lines.append(f"# {key} {field.metadata[key]!r}")
    lines += [f"{x!r} {y!r} {v!r}" for (x, y), v in
              zip(field.mesh.nodes.tolist(), field.values.tolist())]
    return "\n".join(lines) + "\n"


def parse_field(text):
    """Inverse of :func:`format_field`: returns ``(nodes, values)``."""
    rows, n = [], None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("nodes"):
            n = int(line.split()[1])
            continue
        rows.append([float(s) for s in line.split()])
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    if n is not None and len(arr) != n:
        raise LabError("bad-field", f"expected {n} nodes, found {len(arr)}")
    return arr[:, :2], arr[:, 2]
