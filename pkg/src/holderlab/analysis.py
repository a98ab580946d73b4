"""Estimators on computed fields: Holder seminorms, oscillation decay,
Wolff potentials, the Picone inequality, embedding constants and the
necessity estimate.  Every constant the theory leaves implicit is returned
as an empirical number."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

from .errors import LabError
from .measures import N_DIM, Atom, Segment, Weighted, _batch_masses, charge_quadrature, morrey_norm
from .solver import EllipticOperator, SolveConfig, solve_dirichlet

# ------------------------------------------------------------------ Holder


@dataclass
class HolderReport:
    beta1: float
    seminorm: float
    witness: tuple
    points: tuple
    exact: bool
    pairs: int

    def empirical_constant(self, norm, p, diam, beta):
        """``[u]_beta1 / (diam**(beta - beta1) |nu|**(1/(p-1)))``."""
        scale = diam ** (beta - self.beta1) * norm ** (1.0 / (p - 1))
        return self.seminorm / scale if scale > 0 else math.inf

    def predicted_bound(self, C, norm, p, diam, beta):
        """``C diam**(beta - beta1) |nu|**(1/(p-1))`` for a given constant ``C``."""
        return C * diam ** (beta - self.beta1) * norm ** (1.0 / (p - 1))


def _pair_max(x, v, beta1, I, J):
    d = np.hypot(*(x[I] - x[J]).T)
    q = np.abs(v[I] - v[J]) / d ** beta1
    k = int(np.argmax(q))
    return float(q[k]), int(I[k]), int(J[k])


def farthest_point_sample(x, m, start=0):
    """Deterministic farthest-point ordering of ``m`` indices."""
    m = min(m, len(x))
    chosen = [start]
    d = np.hypot(*(x - x[start]).T)
    for _ in range(m - 1):
        k = int(np.argmax(d))
        chosen.append(k)
        d = np.minimum(d, np.hypot(*(x - x[k]).T))
    return np.array(chosen)


def holder_seminorm(field, beta1, pair_budget=4_000_000, near=4.0):
    """``max |u(x) - u(y)| / |x - y|**beta1`` over node pairs.

    All pairs are scanned when their number fits ``pair_budget``; otherwise
    a farthest-point sample (seeded at the extreme values) plus every pair
    closer than ``near * h``.
    """
    if not 0 < beta1 <= 1:
        raise LabError("bad-exponent", "beta1 must lie in (0, 1]")
    x = field.mesh.nodes
    v = field.values
    n = len(x)
    best = (0.0, 0, 0)
    total = n * (n - 1) // 2
    exact = total <= pair_budget
    if exact:
        I, J = np.triu_indices(n, 1)
        if len(I):
            best = _pair_max(x, v, beta1, I, J)
    else:
        m = int(math.sqrt(pair_budget))
        seed = int(np.argmax(v))
        sample = np.unique(np.concatenate([farthest_point_sample(x, m, seed), [int(np.argmin(v))]]))
        I, J = np.triu_indices(len(sample), 1)
        best = _pair_max(x, v, beta1, sample[I], sample[J])
        pairs = cKDTree(x).query_pairs(near * field.mesh.h, output_type="ndarray")
        for s in range(0, len(pairs), 2_000_000):
            blk = pairs[s:s + 2_000_000]
            best = max(best, _pair_max(x, v, beta1, blk[:, 0], blk[:, 1]))
        total = len(I) + len(pairs)
    val, i, j = best
    return HolderReport(beta1, val, (i, j), (tuple(x[i]), tuple(x[j])), exact, int(total))


# ------------------------------------------------------------- oscillation


@dataclass
class OscillationTable:
    radii: np.ndarray
    osc: np.ndarray
    counts: np.ndarray
    alpha0: object

    @property
    def flat(self):
        return self.alpha0 == "flat"


def _osc_table(field, center, radii, min_nodes=10):
    x = field.mesh.nodes
    d = np.hypot(*(x - np.asarray(center, float)).T)
    radii = np.asarray(sorted(radii, reverse=True), float)
    osc, counts = [], []
    for r in radii:
        sel = d <= r
        counts.append(int(sel.sum()))
        osc.append(float(np.ptp(field.values[sel])) if sel.any() else 0.0)
    osc, counts = np.array(osc), np.array(counts)
    usable = counts >= min_nodes
    if usable.sum() < 3:
        raise LabError("under-resolved", "fewer than 3 radii hold at least 10 nodes")
    scale = max(np.abs(field.values).max(), 1e-300)
    if np.all(osc[usable] <= 1e-13 * scale):
        return OscillationTable(radii, osc, counts, "flat")
    keep = usable & (osc > 1e-13 * scale)
    if keep.sum() < 2:
        return OscillationTable(radii, osc, counts, "flat")
    slope = float(np.polyfit(np.log(radii[keep]), np.log(osc[keep]), 1)[0])
    return OscillationTable(radii, osc, counts, slope)


def oscillation_decay(field, center, radii):
    """Oscillation over interior balls and the fitted log-log slope ``alpha0``."""
    mesh = field.mesh
    bd = mesh.nodes[mesh.boundary]
    dist = np.hypot(*(bd - np.asarray(center, float)).T).min() if len(bd) else math.inf
    if max(radii) >= dist:
        raise LabError("bad-ball", "oscillation balls must stay inside the domain")
    return _osc_table(field, center, radii)


def boundary_oscillation(field, xi, radii, domain=None):
    """Oscillation over ``Omega ∩ B(xi, r)`` for ``xi`` on gamma."""
    if domain is not None:
        from .geometry import distance_to_gamma

        if distance_to_gamma(domain, np.asarray(xi, float)) > 1e-9 * domain.diam:
            raise LabError("bad-center", "xi must lie on gamma")
    return _osc_table(field, xi, radii)


# ------------------------------------------------------------------ Wolff


@dataclass
class WolffReport:
    value: float
    per_level: list
    divergent: bool

    @property
    def flag(self):
        return "divergent-at-atom" if self.divergent else ""


def _kinks(charge, x, domain):
    """Radii where ``r -> mu(B(x, r))`` is not smooth."""
    out = [np.hypot(*(np.concatenate(domain.rings) - x).T)]
    for _, c in charge.components("positive"):
        c = c.base if isinstance(c, Weighted) else c
        if isinstance(c, Atom):
            out.append([np.hypot(*(np.asarray(c.point) - x))])
        elif isinstance(c, Segment):
            a, b = np.asarray(c.a, float), np.asarray(c.b, float)
            d = b - a
            t = np.clip(np.dot(x - a, d) / max(np.dot(d, d), 1e-300), 0, 1)
            out.append([np.hypot(*(a + t * d - x)), np.hypot(*(a - x)), np.hypot(*(b - x))])
    return np.concatenate([np.ravel(o) for o in out])


def wolff_potential(charge, x, p, R, levels=20, domain=None, order=6):
    """``int_0^R (mu(B(x, r)) / r**(n - p))**(1/(p-1)) dr / r`` over dyadic levels.

    Level ``j`` covers ``[R 2**-(j+1), R 2**-j]``; each level is integrated in
    ``log r`` by Gauss rules split at the radii where the ball mass has kinks
    or jumps.  The report is flagged ``divergent-at-atom`` when an atom sits at
    ``x`` and the finest level still adds more than 1% of the total.
    """
    if not 1 < p <= 2:
        raise LabError("bad-exponent", "need 1 < p <= 2")
    if domain is None:
        raise LabError("bad-domain", "Wolff potential needs the domain")
    x = np.asarray(x, float)
    if charge.is_zero:
        return WolffReport(0.0, [0.0] * levels, False)
    kinks = _kinks(charge, x, domain)
    gx, gw = np.polynomial.legendre.leggauss(order)
    per_level = []
    for j in range(levels):
        lo, hi = R * 2.0 ** -(j + 1), R * 2.0 ** -j
        cuts = np.unique(np.concatenate([[lo, hi], kinks[(kinks > lo) & (kinks < hi)]]))
        ts, ws = [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            la, lb = math.log(a), math.log(b)
            ts.append(np.exp(0.5 * (la + lb) + 0.5 * (lb - la) * gx))
            ws.append(0.5 * (lb - la) * gw)
        r = np.concatenate(ts)
        w = np.concatenate(ws)
        mass = _batch_masses(_positive(charge), np.repeat(x[None], len(r), 0), r, domain)
        per_level.append(float(w @ (mass / r ** (N_DIM - p)) ** (1.0 / (p - 1))))
    value = float(sum(per_level))
    atom_here = any(isinstance(c, Atom) and np.hypot(*(np.asarray(c.point) - x)) < R * 2.0 ** -levels
                    for _, c in charge.components("positive"))
    divergent = bool(atom_here and value > 0 and per_level[-1] > 0.01 * value)
    return WolffReport(value, per_level, divergent)


def _positive(charge):
    from .measures import RadonCharge

    return RadonCharge(charge.positive, (), charge.q)


@dataclass
class WolffEnergyReport:
    lhs: float
    factor: float
    constant: float
    samples: int
    excluded: int


def wolff_energy_bound(charge, p, q, domain, mesh, norm=None, levels=20):
    """``int W mu dmu`` by nodal quadrature against
    ``|mu|**(p/(p-1)) diam**(n + (1 - n/q) p/(p-1))``."""
    if not charge.is_nonnegative:
        raise LabError("bad-charge", "Wolff energy needs a nonnegative charge")
    if charge.is_zero:
        return WolffEnergyReport(0.0, 0.0, 0.0, 0, 0)
    from .measures import project_load

    load = project_load(charge, mesh)
    R = 2 * domain.diam
    nodes = np.flatnonzero(load > 0)
    lhs, excluded = 0.0, 0
    for i in nodes:
        rep = wolff_potential(charge, mesh.nodes[i], p, R, levels, domain)
        if rep.divergent or not math.isfinite(rep.value):
            excluded += 1
            continue
        lhs += rep.value * load[i]
    if norm is None:
        norm = morrey_norm(charge, q, "global", domain).value
    nq = 0.0 if math.isinf(q) else N_DIM / q
    factor = norm ** (p / (p - 1)) * domain.diam ** (N_DIM + (1 - nq) * p / (p - 1))
    return WolffEnergyReport(lhs, factor, lhs / factor, int(len(nodes)), excluded)


# ----------------------------------------------------------------- Picone


@dataclass
class PiconeReport:
    margins: np.ndarray
    min_margin: float
    scale: float


def picone_check(u, phi, p, floor=0.0):
    """Per-triangle ``|grad phi|**p - |grad u|**(p-2) grad u . grad(u**(1-p) phi**p)``.

    The chain rule is evaluated with P1 gradients and triangle averages of
    ``u`` and ``phi``; the inequality is then an algebraic consequence of
    Young's inequality, so negative margins can only come from rounding.
    """
    if u.mesh is not phi.mesh:
        raise LabError("mesh-mismatch", "fields live on different meshes")
    mesh = u.mesh
    tri = mesh.triangles
    support = np.zeros(mesh.n_nodes, bool)
    touched = tri[(phi.values[tri] != 0).any(axis=1)]
    support[touched.ravel()] = True
    if np.any(u.values[support] <= floor):
        raise LabError("picone-floor", f"u must exceed {floor} where phi is active")
    ub = u.values[tri].mean(1)
    fb = phi.values[tri].mean(1)
    gu, gf = u.gradients, phi.gradients
    nu = np.hypot(gu[:, 0], gu[:, 1])
    nf = np.hypot(gf[:, 0], gf[:, 1])
    ratio = np.where(ub > 0, fb / np.where(ub > 0, ub, 1), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        flux = np.where(nu[:, None] > 0, nu[:, None] ** (p - 2) * gu, 0.0)
    lhs = (1 - p) * ratio ** p * nu ** p + p * ratio ** (p - 1) * (flux * gf).sum(1)
    rhs = nf ** p
    margins = rhs - lhs
    scale = float(max(rhs.max(), np.abs(lhs).max(), 1e-300))
    return PiconeReport(margins, float(margins.min()), scale)


# -------------------------------------------------------------- embedding


@dataclass
class EmbeddingReport:
    rayleigh_lower: float
    picone_upper: float
    gap: float
    phi: np.ndarray = None
    history: list = field(default_factory=list)
    torsion_max: float = 0.0


def _dirichlet_p(mesh, phi, p):
    g = mesh.gradients(phi)
    return float(mesh.areas @ np.hypot(g[:, 0], g[:, 1]) ** p)


def _dirichlet_p_grad(mesh, phi, p):
    g = mesh.gradients(phi)
    n = np.hypot(g[:, 0], g[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        flux = np.where(n[:, None] > 0, n[:, None] ** (p - 2) * g, 0.0)
    elem = np.einsum("tkj,tj->tk", mesh.basis_gradients, p * flux * mesh.areas[:, None])
    return np.bincount(mesh.triangles.ravel(), elem.ravel(), mesh.n_nodes)


def embedding_bounds(charge, mesh, p, trials=4, seed=0, max_iter=200, cfg=None):
    """Lower bound from ascent of ``int |phi|**p dnu`` on the unit p-Dirichlet
    sphere and the upper bound ``|u|_inf**((p-1)/p)`` from the torsion-type solve."""
    from .solver import spd_solve

    op = EllipticOperator(p)
    cfg = SolveConfig() if cfg is None else cfg
    if charge.is_zero:
        return EmbeddingReport(0.0, 0.0, 0.0, np.zeros(mesh.n_nodes), [], 0.0)
    u = solve_dirichlet(op, charge, mesh, 0.0, cfg)
    umax = max(u.max, 0.0)
    upper = umax ** ((p - 1) / p)

    quad = charge_quadrature(charge, mesh, "positive")
    free = ~mesh.boundary
    idx = np.flatnonzero(free)
    K = mesh.stiffness()[idx][:, idx]

    def N(phi):
        return float(quad.weight @ np.abs(quad.values(phi)) ** p)

    def Ngrad(phi):
        vals = quad.values(phi)
        w = quad.weight * p * np.abs(vals) ** (p - 1) * np.sign(vals)
        out = np.zeros(mesh.n_nodes)
        np.add.at(out, mesh.triangles[quad.triangle].ravel(), (quad.bary * w[:, None]).ravel())
        return out

    def normalize(phi):
        D = _dirichlet_p(mesh, phi, p)
        return phi / D ** (1.0 / p) if D > 0 else phi

    rng = np.random.default_rng(seed)
    best, best_phi, history = -math.inf, None, []
    for trial in range(trials):
        phi = np.zeros(mesh.n_nodes)
        phi[idx] = rng.random(len(idx)) + 0.1
        phi = normalize(phi)
        obj = N(phi)
        hist = [obj]
        tau = 1.0
        for _ in range(max_iter):
            g = Ngrad(phi)[idx]
            dg = _dirichlet_p_grad(mesh, phi, p)[idx]
            # projected (tangent) gradient, preconditioned by the stiffness matrix
            lam = float(g @ phi[idx]) / max(float(dg @ phi[idx]), 1e-300)
            d = np.zeros(mesh.n_nodes)
            d[idx] = spd_solve(K, g - lam * dg)
            if np.abs(d).max() <= 1e-14 * np.abs(phi).max():
                break
            while tau > 1e-12:
                trial_phi = normalize(np.maximum(phi + tau * d, 0.0))
                new = N(trial_phi)
                if new > obj:
                    break
                tau *= 0.5
            else:
                break
            gain = new - obj
            phi, obj = trial_phi, new
            hist.append(obj)
            tau = min(2 * tau, 1e6)
            if gain <= 1e-13 * obj:
                break
        history.append(hist)
        if obj > best:
            best, best_phi = obj, phi
    lower = best ** (1.0 / p)
    return EmbeddingReport(lower, upper, upper - lower, best_phi, history, umax)


# ------------------------------------------------------------- necessity


def _rational(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    f = Fraction(float(x))
    return f if f.denominator <= 2 ** 20 else None


def necessity_q(beta, p, n=N_DIM):
    """``n / (n - beta (p - 1))``, exact when the inputs are rational."""
    rb, rp = _rational(beta), _rational(p)
    if rb is not None and rp is not None:
        den = n - rb * (rp - 1)
        if den <= 0:
            raise LabError("q-undefined", "beta (p - 1) must stay below n")
        return Fraction(n) / den
    den = n - beta * (p - 1)
    if den <= 0:
        raise LabError("q-undefined", "beta (p - 1) must stay below n")
    return n / den


@dataclass
class NecessityReport:
    q: object
    lhs: float
    seminorm: float
    constant: float
    norm: float
    holder: HolderReport = None


def necessity_check(u, charge, beta, p, domain, L=1.0, scan=None, pair_budget=4_000_000):
    """``|nu|**(1/(p-1))`` in the floated class ``q = n/(n - beta(p-1))`` (gamma
    = the whole boundary) against the Holder seminorm ``[u]_beta``."""
    q = necessity_q(beta, p)
    hold = holder_seminorm(u, beta, pair_budget)
    if charge.is_zero:
        return NecessityReport(q, 0.0, hold.seminorm, 0.0, 0.0, hold)
    rep = morrey_norm(charge, float(q), "floated", domain.with_gamma("all"), scan)
    lhs = rep.value ** (1.0 / (p - 1))
    C = lhs / hold.seminorm if hold.seminorm > 0 else math.inf
    return NecessityReport(q, lhs, hold.seminorm, C, rep.value, hold)


# ----------------------------------------------------- empirical constants


def global_bound_constant(u, norm, p, beta, diam):
    """``C1`` in ``sup u <= sup_boundary u + C1 |nu|**(1/(p-1)) diam**beta``."""
    top = u.max - float(u.values[u.mesh.boundary].max())
    scale = norm ** (1.0 / (p - 1)) * diam ** beta
    return top / scale if scale > 0 else math.inf


def weak_harnack_ratios(u, norm, p, beta, centers, radii):
    """``mean_B u / (inf_B u + |nu|**(1/(p-1)) diam(B)**beta)`` over interior balls."""
    mesh = u.mesh
    mass = mesh.lumped_mass()
    x = mesh.nodes
    bd = x[mesh.boundary]
    out = []
    for c in np.atleast_2d(centers):
        dist = np.hypot(*(bd - c).T).min()
        for r in radii:
            if 2 * r >= dist:
                continue
            sel = np.hypot(*(x - c).T) <= r
            if sel.sum() < 10:
                continue
            avg = float(mass[sel] @ u.values[sel] / mass[sel].sum())
            den = float(u.values[sel].min()) + norm ** (1.0 / (p - 1)) * (2 * r) ** beta
            out.append(avg / den)
    return np.array(out)
