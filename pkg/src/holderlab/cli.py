"""Experiment runner: ``holderlab run <config.toml>`` and
``holderlab compare <manifestA> <manifestB>``.

A run writes one CSV per task and mesh level plus ``manifest.json`` under
``$HOLDERLAB_OUTPUT/<output>`` (the root defaults to ``./holderlab-out``).
Exit status: 0 when every task contract held, 1 on a violated contract
(the invariant is named on stderr), 2 on an unreadable or invalid config.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .errors import LabError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("holderlab.cli")

OUTPUT_ENV = "HOLDERLAB_OUTPUT"
TASKS = ("morrey", "capacity", "cdc", "solve", "barrier", "holder", "embed", "wolff", "necessity")
MESH_TASKS = {"capacity", "solve", "barrier", "holder", "embed", "wolff", "necessity"}
RATIO_BAND = (0.5, 2.0)


class ConfigError(Exception):
    """Invalid experiment configuration (exit status 2)."""


# ------------------------------------------------------------------ config


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        # the decoder message already ends with "(at line L, column C)"
        raise ConfigError(f"{path}: {err}") from None
    validate_config(cfg)
    cfg["_path"] = str(path.resolve())
    cfg["_text"] = text
    return cfg


def validate_config(cfg):
    for key in ("domain", "tasks"):
        if key not in cfg:
            raise ConfigError(f"missing [{key}]")
    levels = cfg.get("mesh", {}).get("levels", [])
    if any(not isinstance(h, (int, float)) or h <= 0 for h in levels):
        raise ConfigError("mesh.levels must be positive numbers")
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("mesh.levels must be strictly decreasing in h")
    names = [c.get("name") for c in cfg.get("charges", [])]
    if len(set(names)) != len(names) or None in names:
        raise ConfigError("every charge needs a unique name")
    ids = set()
    for i, task in enumerate(cfg["tasks"]):
        kind = task.get("kind")
        if kind not in TASKS:
            raise ConfigError(f"tasks[{i}]: unknown kind {kind!r}")
        tid = task.get("id", f"{i:02d}_{kind}")
        if tid in ids:
            raise ConfigError(f"tasks[{i}]: duplicate id {tid!r}")
        ids.add(tid)
        task["id"] = tid
        if "h" in task and (isinstance(task["h"], bool) or not isinstance(task["h"], (int, float))
                            or task["h"] <= 0):
            raise ConfigError(f"task {tid}: h must be a positive number")
        if kind in MESH_TASKS and not levels and "h" not in task:
            raise ConfigError(f"task {tid}: needs mesh.levels or h")
        if kind not in ("capacity", "cdc") and task.get("charge") not in names:
            raise ConfigError(f"task {tid}: charge {task.get('charge')!r} is not defined")
        if kind == "capacity" and "K" not in task:
            raise ConfigError(f"task {tid}: capacity needs K")


def build_domain(spec, base_dir):
    from . import geometry as g

    kind = spec.get("kind", "square")
    gamma = spec.get("gamma", "all")
    if kind == "square":
        return g.unit_square(gamma)
    if kind == "rectangle":
        return g.rectangle(*spec["bounds"], gamma=gamma)
    if kind == "lshape":
        return g.l_shape(gamma)
    if kind == "disk":
        return g.disk(spec.get("center", (0.0, 0.0)), spec.get("radius", 1.0), spec.get("sides", 256), gamma=gamma)
    if kind == "polygon":
        return g.polygon(spec["vertices"], spec.get("holes", ()), gamma)
    if kind == "file":
        dom = g.read_domain(Path(base_dir) / spec["path"])
        return dom.with_gamma(gamma) if "gamma" in spec else dom
    raise ConfigError(f"unknown domain kind {kind!r}")


def build_charges(specs, domain):
    from . import measures as m

    out = {}
    for spec in specs:
        kind = spec.get("kind")
        if kind == "zero":
            c = m.zero_charge()
        elif kind == "lebesgue":
            c = m.lebesgue(spec.get("coef", 1.0))
        elif kind == "atom":
            c = m.atom_charge(spec["point"], spec.get("mass", 1.0))
        elif kind == "segment":
            c = m.segment_charge(spec["a"], spec["b"], spec.get("c0", 1.0), spec.get("c1"))
        elif kind == "weighted":
            if spec.get("base") not in out:
                raise ConfigError(f"charge {spec['name']}: base must name an earlier charge")
            c = m.distance_weight(out[spec["base"]], spec["t"], domain)
        elif kind == "sum":
            parts = [out[n] for n in spec["of"]]
            c = parts[0]
            for part in parts[1:]:
                c = c + part
        else:
            raise ConfigError(f"charge {spec.get('name')}: unknown kind {kind!r}")
        out[spec["name"]] = c.scaled(spec.get("scale", 1.0))
    return out


# ------------------------------------------------------------------- tasks


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class Context:
    """Shared, read-only inputs for the task functions."""

    def __init__(self, cfg):
        from .solver import EllipticOperator

        self.cfg = cfg
        self.base_dir = Path(cfg["_path"]).parent
        self.domain = build_domain(cfg["domain"], self.base_dir)
        self.charges = build_charges(cfg.get("charges", []), self.domain)
        op = cfg.get("operator", {})
        self.p = float(op.get("p", 2.0))
        self.op = EllipticOperator(self.p, kind=op.get("kind", "p-laplacian"))
        self.seed = int(cfg.get("seed", 0))

    def charge(self, task):
        return self.charges[task["charge"]]

    def q_of(self, task):
        q = task.get("q", self.charge(task).q)
        return math.inf if q in ("inf", "infinity") else float(q)

    def mesh(self, h, **kw):
        from .geometry import build_mesh

        return build_mesh(self.domain, h, **kw)

    def floated_norm(self, charge, q):
        from .measures import morrey_norm

        rep = morrey_norm(charge, q, "floated", self.domain)
        if rep.divergent:
            raise LabError("morrey-divergent", "charge is not in the requested floated Morrey class")
        return rep.value


def task_morrey(ctx, task, h):
    from .measures import beta_exponent, morrey_csv, morrey_norm

    charge = ctx.charge(task)
    q = ctx.q_of(task)
    rep = morrey_norm(charge, q, task.get("mode", "floated"), ctx.domain)
    consts = {"morrey_norm": rep.value, "divergent": int(rep.divergent)}
    if task.get("beta", False):
        consts["beta"] = beta_exponent(ctx.p, q)
    if task.get("expect_divergent") is not None and bool(task["expect_divergent"]) != rep.divergent:
        raise LabError("morrey-divergence-flag", f"divergent={rep.divergent}")
    return morrey_csv([rep]), consts


def _region(spec):
    from .capacity import disk_polygon

    if "radius" in spec:
        return disk_polygon(spec.get("center", (0.0, 0.0)), spec["radius"], spec.get("sides", 256),
                            spec.get("circumscribed", False))
    from shapely.geometry import Polygon

    return Polygon(spec["vertices"])


def task_capacity(ctx, task, h):
    from .capacity import annulus_capacity, capacity

    K = _region(task["K"])
    U = _region(task["U"]) if "U" in task else ctx.domain
    rep = capacity(K, U, ctx.p, h)
    consts = {"capacity": rep.value}
    exact = math.nan
    if task.get("oracle") == "annulus":
        exact = annulus_capacity(task["K"]["radius"], task["U"]["radius"], ctx.p)
        err = rep.value / exact - 1
        consts["rel_error"] = err
        if "tolerance" in task and abs(err) > task["tolerance"]:
            raise LabError("oracle-tolerance", f"capacity relative error {err:.3g}")
    return _csv(["h", "value", "exact"], [[rep.mesh_h, rep.value, exact]]), consts


def task_cdc(ctx, task, h):
    from .capacity import cdc_check

    rep = cdc_check(ctx.domain, ctx.p, task.get("radii"), task.get("samples"), task.get("resolution", 16))
    if "gamma_min" in task and rep.gamma_estimate < task["gamma_min"]:
        raise LabError("cdc-lower-bound", f"gamma estimate {rep.gamma_estimate:.3g}")
    return rep.csv(), {"gamma": rep.gamma_estimate}


def radial_oracle(p, radius, coef=1.0):
    """Exact solution of ``-div(|grad u|**(p-2) grad u) = coef`` in a disk, zero on the circle."""
    pp = p / (p - 1)
    scale = (p - 1) / p * (coef / 2) ** (1 / (p - 1))
    return lambda r: scale * (radius ** pp - r ** pp)


def task_solve(ctx, task, h):
    import numpy as np

    from .analysis import global_bound_constant
    from .measures import beta_exponent, morrey_norm
    from .solver import field_csv, solve_dirichlet

    charge = ctx.charge(task)
    mesh = ctx.mesh(h)
    u = solve_dirichlet(ctx.op, charge, mesh, task.get("boundary", 0.0))
    consts = {"u_max": u.max, "residual": u.metadata.get("residual", 0.0)}
    if task.get("oracle") == "radial":
        center = np.asarray(ctx.cfg["domain"].get("center", (0.0, 0.0)), float)
        exact = radial_oracle(ctx.p, ctx.cfg["domain"].get("radius", 1.0), task.get("coef", 1.0))
        ue = exact(np.hypot(*(mesh.nodes - center).T))
        err = float(np.abs(u.values - ue).max() / np.abs(ue).max())
        consts["linf_error"] = err
        if "tolerance" in task and err > task["tolerance"]:
            raise LabError("oracle-tolerance", f"relative L-infinity error {err:.3g}")
    if not charge.is_zero and charge.is_nonnegative:
        q = ctx.q_of(task)
        norm = morrey_norm(charge, q, "global", ctx.domain).value
        consts["C1"] = global_bound_constant(u, norm, ctx.p, beta_exponent(ctx.p, q), ctx.domain.diam)
    return field_csv(u), consts


def task_barrier(ctx, task, h):
    from .barrier import BarrierConfig, build_barrier

    bc = BarrierConfig(theta=task.get("theta", 0.25), beta0=task.get("beta0", 0.25),
                       k_min=task.get("k_min", 0), k_max=task.get("k_max"),
                       resolution=task.get("resolution", 12))
    ell = ctx.domain.diam
    k_last = bc.k_max if bc.k_max is not None else 6
    mesh = ctx.mesh(h, grade=(task.get("grade", 1.0), ell * bc.theta ** k_last / 2))
    res = build_barrier(ctx.domain, ctx.charge(task), ctx.op, bc, mesh)
    consts = {"beta0": bc.beta0, "C2": res.bound_constant, "spread": res.spread, "slope": res.slope}
    if "max_spread" in task and res.spread > task["max_spread"]:
        raise LabError("barrier-two-sided", f"spread {res.spread:.3g}")
    if "slope_tol" in task and abs(res.slope - bc.beta0) > task["slope_tol"]:
        raise LabError("barrier-slope", f"slope {res.slope:.3g}")
    return res.csv(ctx.domain, bc.beta0), consts


def task_holder(ctx, task, h):
    from .analysis import holder_seminorm
    from .measures import beta_exponent
    from .solver import solve_dirichlet

    charge = ctx.charge(task)
    q = ctx.q_of(task)
    beta1 = task.get("beta1", min(beta_exponent(ctx.p, q), 1.0) / 2)
    norm = ctx.floated_norm(charge, q) if not charge.is_zero else 0.0
    u = solve_dirichlet(ctx.op, charge, ctx.mesh(h))
    rep = holder_seminorm(u, beta1, task.get("pair_budget", 4_000_000))
    C = rep.seminorm / norm ** (1 / (ctx.p - 1)) if norm > 0 else 0.0
    row = [h, beta1, rep.seminorm, norm, C, int(rep.exact), *rep.points[0], *rep.points[1]]
    head = ["h", "beta1", "seminorm", "norm", "C", "exact", "x1", "y1", "x2", "y2"]
    return _csv(head, [[float(v) for v in row]]), {"holder_C": C}


def task_embed(ctx, task, h):
    from .analysis import embedding_bounds

    rep = embedding_bounds(ctx.charge(task), ctx.mesh(h), ctx.p, task.get("trials", 4), ctx.seed)
    if rep.rayleigh_lower > rep.picone_upper * 1.05:
        raise LabError("embedding-order", f"lower {rep.rayleigh_lower:.4g} > upper {rep.picone_upper:.4g}")
    return (_csv(["h", "rayleigh_lower", "picone_upper", "gap"], [[h, rep.rayleigh_lower, rep.picone_upper, rep.gap]]),
            {"rayleigh_lower": rep.rayleigh_lower, "picone_upper": rep.picone_upper})


def task_wolff(ctx, task, h):
    from .analysis import wolff_energy_bound, wolff_potential

    charge = ctx.charge(task)
    rows = []
    for x in task.get("points", []):
        rep = wolff_potential(charge, x, ctx.p, task.get("R", ctx.domain.diam), task.get("levels", 20), ctx.domain)
        rows.append(["point", float(x[0]), float(x[1]), rep.value, rep.flag])
    consts = {}
    if charge.is_nonnegative and not charge.has_atoms:
        q = ctx.q_of(task)
        en = wolff_energy_bound(charge, ctx.p, q, ctx.domain, ctx.mesh(h))
        rows.append(["energy", math.nan, math.nan, en.lhs, f"excluded={en.excluded}"])
        consts["wolff_C"] = en.constant
    return _csv(["kind", "x", "y", "value", "flag"], rows), consts


def task_necessity(ctx, task, h):
    from .analysis import necessity_check
    from .solver import solve_dirichlet

    charge = ctx.charge(task)
    u = solve_dirichlet(ctx.op, charge, ctx.mesh(h))
    rep = necessity_check(u, charge, task["beta"], ctx.p, ctx.domain, pair_budget=task.get("pair_budget", 4_000_000))
    row = [h, str(rep.q), rep.lhs, rep.seminorm, rep.constant]
    return _csv(["h", "q", "lhs", "seminorm", "C"], [row]), {"necessity_C": rep.constant}


RUNNERS = {name: globals()[f"task_{name}"] for name in TASKS}


# --------------------------------------------------------------------- run


def output_root():
    return Path(os.environ.get(OUTPUT_ENV, "holderlab-out"))


def _config_signature(cfg):
    """Hash of everything except mesh levels and the output location."""
    keep = {k: v for k, v in cfg.items() if not k.startswith("_") and k not in ("mesh", "output")}
    return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()


def _levels(cfg, task):
    if task["kind"] not in MESH_TASKS:
        return [None]
    return [task["h"]] if "h" in task else list(cfg["mesh"]["levels"])


def run(config_path, threads=1, deterministic=False):
    """Execute a config; returns the exit status."""
    try:
        cfg = load_config(config_path)
        ctx = Context(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (LabError, KeyError, TypeError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out = output_root() / cfg.get("output", Path(config_path).stem)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(task, li, h) for task in cfg["tasks"] for li, h in enumerate(_levels(cfg, task))]

    def execute(job):
        task, li, h = job
        try:
            text, consts = RUNNERS[task["kind"]](ctx, task, h)
            return text, consts, None
        except LabError as err:
            return None, {}, err

    workers = 1 if deterministic else max(1, int(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(execute, jobs))  # submission order, so output is order-independent

    manifest = {
        "code_version": __version__,
        "config": cfg["_path"],
        "config_sha256": hashlib.sha256(cfg["_text"].encode()).hexdigest(),
        "signature": _config_signature(cfg),
        "seed": ctx.seed,
        "p": ctx.p,
        "levels": cfg.get("mesh", {}).get("levels", []),
        "tasks": [],
        "constants": {},
        "violations": [],
    }
    status = 0
    for (task, li, h), (text, consts, err) in zip(jobs, results):
        name = f"{task['id']}_L{li}.csv" if h is not None else f"{task['id']}.csv"
        entry = {"id": task["id"], "kind": task["kind"], "level": li, "h": h}
        if err is not None:
            status = 1
            entry["violation"] = err.code
            manifest["violations"].append({"task": task["id"], "h": h, "invariant": err.code, "message": str(err)})
            print(f"contract violated in {task['id']} (h={h}): {err}", file=sys.stderr)
        else:
            (out / name).write_text(text)
            entry["file"] = name
            for key, val in consts.items():
                manifest["constants"].setdefault(f"{task['id']}.{key}", {})[str(li)] = float(val)
        manifest["tasks"].append(entry)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", out)
    return status


# ----------------------------------------------------------------- compare


def _finest(values):
    return values[max(values, key=int)]


def compare(path_a, path_b, stream=None):
    """Ratio table ``A / B`` of the constants shared by two manifests."""
    stream = sys.stdout if stream is None else stream
    try:
        a = json.loads(Path(path_a).read_text())
        b = json.loads(Path(path_b).read_text())
    except (OSError, json.JSONDecodeError) as err:
        print(f"incomparable: {err}", file=sys.stderr)
        return 2, []
    if a.get("signature") != b.get("signature"):
        print("incomparable: manifests come from different configs", file=sys.stderr)
        return 2, []
    rows = []
    for key in sorted(set(a["constants"]) & set(b["constants"])):
        va, vb = _finest(a["constants"][key]), _finest(b["constants"][key])
        if va == vb:
            ratio = 1.0
        else:
            ratio = va / vb if vb != 0 else math.inf
        flag = "" if RATIO_BAND[0] <= ratio <= RATIO_BAND[1] else "outside"
        rows.append((key, va, vb, ratio, flag))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["constant", "a", "b", "ratio", "flag"])
    w.writerows(rows)
    return 0, rows


# -------------------------------------------------------------------- main


def _limit_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="holderlab", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=1, help="worker threads across tasks and levels")
    ap.add_argument("--deterministic", action="store_true", help="single worker, ordered reductions")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_cmp = sub.add_parser("compare", help="compare two manifests")
    p_cmp.add_argument("manifest_a")
    p_cmp.add_argument("manifest_b")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.deterministic:
        _limit_threads(1)
    if args.command == "run":
        return run(args.config, args.threads, args.deterministic)
    return compare(args.manifest_a, args.manifest_b)[0]


if __name__ == "__main__":
    sys.exit(main())
