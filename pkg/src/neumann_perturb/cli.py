"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``), overlays its
own flags, validates the merged result and writes one CSV plus
``report.json`` into the output directory. Exit codes: 0 success, 2 invalid
input (with a JSON-pointer path for config fields), 3 numerical failure
(naming the module that failed).

Config layout (all sections optional)::

    {
      "mesh": {"shape": "square", "n": 32},          # or {"path": "m.txt"}
      "metric": {"type": "identity"},                # analytic metric descriptor
      "perturbation": {"type": "constant", "c11": 1, "c12": 0, "c22": 2},
      "cluster": {"index": 1},                       # or {"window": [lo, hi]}
      "k": 12,
      "t_grid": [-0.04, -0.02, -0.01, 0, 0.01, 0.02, 0.04],
      "tolerances": {"cluster_tol": 1e-3, "gap_tol": null},
      "ls": {"t": [0.005, 0.01, 0.02], "window": null},
      "generic": {"samples": 100, "seed": 0, "t_probe": 0.01, "family": "random"},
      "calculus": {"suite": "lemma1", "steps": [1e-3, 5e-4, 2.5e-4]},
      "output": "out"
    }
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .chart_calculus import SUITES, run_suite
from .eigensolver import DEFAULT_CLUSTER_TOL, cluster as make_clusters, solve_gevp, solve_window, spectrum_to_csv
from .errors import NumericalError, SPDError, ValidationError
from .fem import assemble_derivatives, assemble_pencil
from .liapunov_schmidt import LiapunovSchmidt
from .mesh import generate_annulus, generate_disk, generate_square, load_mesh, save_mesh
from .metric import (
    SymTensorField,
    analytic_metric,
    metric_at_t,
    metric_from_descriptor,
    random_perturbation,
)
from .perturbation import (
    boundary_flux,
    discrete_branch_matrix,
    genericity_experiment,
    hadamard_matrix,
    isolation_window,
    splitting_perturbation,
    track_branches,
)

__all__ = ["ConfigError", "ExperimentConfig", "validate_config", "build_parser", "main"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValidationError):
    """Invalid config field; ``pointer`` is a JSON pointer to it."""

    def __init__(self, pointer, message):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


@dataclass
class ExperimentConfig:
    mesh: dict = field(default_factory=lambda: {"shape": "square", "n": 16})
    metric: dict = field(default_factory=lambda: {"type": "identity"})
    perturbation: dict = field(default_factory=lambda: {"type": "zero"})
    cluster: dict = field(default_factory=lambda: {"index": 1})
    k: int = 12
    t_grid: list = field(default_factory=lambda: [-0.04, -0.02, -0.01, 0.0, 0.01, 0.02, 0.04])
    cluster_tol: float = DEFAULT_CLUSTER_TOL
    gap_tol: float | None = None
    ls: dict = field(default_factory=lambda: {"t": [0.005, 0.01, 0.02], "window": None})
    generic: dict = field(default_factory=lambda: {"samples": 100, "seed": 0, "t_probe": 0.01, "family": "random"})
    calculus: dict = field(default_factory=lambda: {"suite": "lemma1", "steps": [1e-3, 5e-4, 2.5e-4]})
    output: str = "."


# ---------------------------------------------------------------------------
# validation

_SECTIONS = {
    "mesh", "metric", "perturbation", "cluster", "k", "t_grid", "tolerances",
    "ls", "generic", "calculus", "output",
}
_PERTURB_TYPES = ("zero", "constant", "random", "scaling", "residual")


def _num(cfg, key, ptr, kind=float, positive=False, required=True, default=None):
    if key not in cfg:
        if required:
            raise ConfigError(f"{ptr}/{key}", "missing required field")
        return default
    v = cfg[key]
    if v is None and not required:
        return default
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not float(v).is_integer()):
        raise ConfigError(f"{ptr}/{key}", f"expected {kind.__name__}, got {v!r}")
    v = kind(v)
    if not np.isfinite(v):
        raise ConfigError(f"{ptr}/{key}", "must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{ptr}/{key}", f"must be positive, got {v!r}")
    return v


def _obj(cfg, key, ptr):
    v = cfg.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"{ptr}/{key}", "expected an object")
    return v


def _float_list(v, ptr, nonempty=True):
    if not isinstance(v, list) or (nonempty and not v):
        raise ConfigError(ptr, "expected a non-empty list of numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x):
            raise ConfigError(f"{ptr}/{i}", f"expected a finite number, got {x!r}")
        out.append(float(x))
    return out


def validate_config(raw):
    """Check a merged config dict and return an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"/{key}", "unknown field")
    cfg = ExperimentConfig()

    mesh = _obj(raw, "mesh", "") or cfg.mesh
    if "path" in mesh:
        if not isinstance(mesh["path"], str):
            raise ConfigError("/mesh/path", "expected a string")
    else:
        shape = mesh.get("shape")
        if shape not in ("square", "disk", "annulus"):
            raise ConfigError("/mesh/shape", f"expected 'square', 'disk' or 'annulus', got {shape!r}")
        _num(mesh, "n", "/mesh", int, positive=True)
    cfg.mesh = mesh

    metric = _obj(raw, "metric", "") or cfg.metric
    try:
        analytic_metric(metric)
    except ValidationError as exc:
        raise ConfigError("/metric", str(exc)) from None
    cfg.metric = metric

    pert = _obj(raw, "perturbation", "") or cfg.perturbation
    kind = pert.get("type")
    if kind not in _PERTURB_TYPES:
        raise ConfigError("/perturbation/type", f"expected one of {list(_PERTURB_TYPES)}, got {kind!r}")
    if kind == "constant":
        for c in ("c11", "c12", "c22"):
            _num(pert, c, "/perturbation")
    elif kind == "random":
        _num(pert, "seed", "/perturbation", int)
        _num(pert, "amplitude", "/perturbation", required=False)
        _num(pert, "frequency_cap", "/perturbation", int, required=False)
    elif kind == "scaling":
        _num(pert, "c", "/perturbation", required=False)
    elif kind == "residual" and not isinstance(pert.get("normalize", True), bool):
        raise ConfigError("/perturbation/normalize", "expected a boolean")
    cfg.perturbation = pert

    cl = _obj(raw, "cluster", "") or cfg.cluster
    if "window" in cl:
        win = _float_list(cl["window"], "/cluster/window")
        if len(win) != 2 or not win[0] < win[1]:
            raise ConfigError("/cluster/window", "expected [lo, hi] with lo < hi")
    else:
        idx = _num(cl, "index", "/cluster", int)
        if idx < 0:
            raise ConfigError("/cluster/index", "must be >= 0")
    cfg.cluster = cl

    cfg.k = _num(raw, "k", "", int, positive=True, required=False, default=cfg.k)
    if "t_grid" in raw:
        cfg.t_grid = _float_list(raw["t_grid"], "/t_grid")
    tol = _obj(raw, "tolerances", "")
    for key in tol:
        if key not in ("cluster_tol", "gap_tol"):
            raise ConfigError(f"/tolerances/{key}", "unknown field")
    cfg.cluster_tol = _num(tol, "cluster_tol", "/tolerances", positive=True, required=False, default=cfg.cluster_tol)
    cfg.gap_tol = _num(tol, "gap_tol", "/tolerances", positive=True, required=False, default=None)

    ls = {**cfg.ls, **_obj(raw, "ls", "")}
    ls["t"] = _float_list(ls["t"], "/ls/t")
    ls["window"] = _num(ls, "window", "/ls", positive=True, required=False, default=None)
    cfg.ls = ls

    gen = {**cfg.generic, **_obj(raw, "generic", "")}
    gen["samples"] = _num(gen, "samples", "/generic", int, positive=True)
    gen["seed"] = _num(gen, "seed", "/generic", int)
    gen["t_probe"] = _num(gen, "t_probe", "/generic")
    if gen.get("family") not in ("random", "scaling"):
        raise ConfigError("/generic/family", f"expected 'random' or 'scaling', got {gen.get('family')!r}")
    cfg.generic = gen

    calc = {**cfg.calculus, **_obj(raw, "calculus", "")}
    if calc["suite"] not in SUITES:
        raise ConfigError("/calculus/suite", f"expected one of {sorted(SUITES)}, got {calc['suite']!r}")
    calc["steps"] = _float_list(calc["steps"], "/calculus/steps")
    if any(h <= 0 for h in calc["steps"]):
        raise ConfigError("/calculus/steps", "steps must be positive")
    cfg.calculus = calc

    out = raw.get("output", cfg.output)
    if not isinstance(out, str):
        raise ConfigError("/output", "expected a string")
    cfg.output = out
    return cfg


# ---------------------------------------------------------------------------
# building blocks


def build_mesh(spec):
    if "path" in spec:
        try:
            return load_mesh(spec["path"], reorient=bool(spec.get("reorient", False)))
        except OSError as exc:
            raise ConfigError("/mesh/path", f"cannot read mesh: {exc}") from None
    n = int(spec["n"])
    return {"square": generate_square, "disk": generate_disk, "annulus": generate_annulus}[spec["shape"]](n)


def build_perturbation(spec, mesh, g, cluster=None, M=None):
    kind = spec["type"]
    if kind == "zero":
        return SymTensorField.zeros(mesh.n_vertices)
    if kind == "constant":
        return SymTensorField.constant(mesh.n_vertices, spec["c11"], spec["c12"], spec["c22"])
    if kind == "random":
        return random_perturbation(mesh, int(spec["seed"]), spec.get("amplitude", 1.0), int(spec.get("frequency_cap", 2)))
    if kind == "scaling":
        return g * float(spec.get("c", 1.0))
    if cluster is None:
        raise ValidationError("perturbation 'residual' needs a selected cluster")
    T = splitting_perturbation(mesh, g, cluster, M)
    if spec.get("normalize", True):
        # sup-norm 1, so the default t-grid keeps g + tT positive definite
        T = T * (1.0 / float(np.max(np.abs(T.values))))
    return T


def select_cluster(K, M, spec, k, cluster_tol):
    """Pick a cluster by index in the clustered spectrum or by an eigenvalue window."""
    if "window" in spec:
        lo, hi = spec["window"]
        pairs = solve_window(K, M, lo, hi)
        groups = make_clusters(pairs, cluster_tol, M) if pairs else []
        if len(groups) != 1:
            raise ConfigError("/cluster/window", f"window holds {len(groups)} clusters, expected exactly 1")
        return groups[0]
    idx = int(spec["index"])
    n = K.shape[0]
    while True:
        pairs = solve_gevp(K, M, min(k, n))
        groups = make_clusters(pairs, cluster_tol, M)
        # the last group may be cut off by k unless the whole spectrum was computed
        complete = groups if k >= n else groups[:-1]
        if idx < len(complete):
            return complete[idx]
        if k >= n:
            raise ConfigError("/cluster/index", f"only {len(groups)} clusters exist")
        k *= 2


def check_t_grid(g, T, ts, pointer="/t_grid"):
    for t in ts:
        try:
            metric_at_t(g, T, t)
        except SPDError as exc:
            raise ConfigError(pointer, f"t={t!r} leaves the SPD cone: {exc}") from None


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x) + 0.0)


class Run:
    """Shared state of one invocation: config, output paths, setup helpers."""

    def __init__(self, cfg, args):
        self.cfg = cfg
        self.args = args
        self.outdir = Path(cfg.output)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.report = {"command": args.command, "version": __version__}
        if not args.deterministic:
            self.report["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    def path(self, name):
        p = Path(name)
        return p if p.is_absolute() else self.outdir / p

    def setup(self):
        self.mesh = build_mesh(self.cfg.mesh)
        self.g = metric_from_descriptor(self.cfg.metric, self.mesh)
        self.K, self.M = assemble_pencil(self.mesh, self.g)
        return self.mesh, self.g

    def cluster(self):
        return select_cluster(self.K, self.M, self.cfg.cluster, self.cfg.k, self.cfg.cluster_tol)

    def finish(self):
        text = json.dumps(self.report, indent=2, sort_keys=True, default=_json_default) + "\n"
        self.path("report.json").write_text(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh_gen(run):
    mesh = build_mesh(run.cfg.mesh)
    out = run.path(run.args.out_file or "mesh.txt")
    save_mesh(mesh, out)
    run.report.update(
        mesh=run.cfg.mesh,
        file=out.name,
        vertices=mesh.n_vertices,
        triangles=mesh.n_triangles,
        boundary_edges=len(mesh.boundary_edges),
        euler_characteristic=mesh.euler_characteristic(),
        area=mesh.area(),
    )


def cmd_eigs(run):
    mesh, g = run.setup()
    pairs = solve_gevp(run.K, run.M, min(run.cfg.k, mesh.n_vertices))
    groups = make_clusters(pairs, run.cfg.cluster_tol, run.M)
    out = run.path(run.args.out_file or "spectrum.csv")
    spectrum_to_csv(pairs, groups, out)
    run.report.update(
        file=out.name,
        eigenvalues=[p.value for p in pairs],
        clusters=[{"mean": c.mean, "multiplicity": c.multiplicity, "indices": list(c.indices)} for c in groups],
    )


def cmd_hadamard(run):
    mesh, g = run.setup()
    c = run.cluster()
    H = build_perturbation(run.cfg.perturbation, mesh, g, c, run.M)
    geo = hadamard_matrix(mesh, g, c, H, run.M)
    dK, dM = assemble_derivatives(mesh, g, H)
    disc = discrete_branch_matrix(c, dK, dM)
    chosen = disc if run.args.method == "discrete" else geo
    m = c.multiplicity
    out = run.path(run.args.out_file or "matrix.csv")
    _write_csv(out, ["i", "j", "value"], [[i, j, _fmt(chosen.matrix[i, j])] for i in range(m) for j in range(m)])
    flux = boundary_flux(mesh, g, c, H)
    run.report.update(
        file=out.name,
        provenance=chosen.provenance,
        cluster={"mean": c.mean, "multiplicity": m},
        eigenvalues_geometric=geo.eigenvalues(),
        eigenvalues_discrete=disc.eigenvalues(),
        boundary_flux_norm=float(np.linalg.norm(flux)),
    )


def cmd_branches(run):
    mesh, g = run.setup()
    c = run.cluster()
    T = build_perturbation(run.cfg.perturbation, mesh, g, c, run.M)
    ts = sorted(set(run.cfg.t_grid) | {0.0})
    check_t_grid(g, T, ts)
    curves = track_branches(mesh, g, T, c.mean, ts, run.cfg.cluster_tol, threads=run.args.threads)
    dK, dM = assemble_derivatives(mesh, g, T)
    predicted = discrete_branch_matrix(c, dK, dM).eigenvalues()
    rows = []
    for k, t in enumerate(curves.t):
        for b in range(c.multiplicity):
            rows.append([_fmt(t), b, _fmt(curves.values[k, b]), _fmt(curves.overlaps[k, b])])
    out = run.path(run.args.out_file or "branches.csv")
    _write_csv(out, ["t", "branch", "eigenvalue", "overlap"], rows)
    slopes = {repr(t): np.sort(s) for t, s in curves.slopes().items()}
    scale = max(1.0, float(np.max(np.abs(predicted))))
    dev = {t: float(np.max(np.abs(s - predicted)) / scale) for t, s in slopes.items()}
    run.report.update(
        file=out.name,
        cluster={"mean": c.mean, "multiplicity": c.multiplicity},
        predicted_slopes=predicted,
        fd_slopes=slopes,
        max_relative_deviation=dev,
    )


def cmd_ls(run):
    mesh, g = run.setup()
    c = run.cluster()
    T = build_perturbation(run.cfg.perturbation, mesh, g, c, run.M)
    ts = run.cfg.ls["t"]
    check_t_grid(g, T, ts, "/ls/t")
    _, half = isolation_window(run.K, run.M, c.mean, run.cfg.cluster_tol)
    half = run.cfg.ls["window"] or half
    red = LiapunovSchmidt(mesh, g, T, c)
    rows, worst = [], 0.0
    for t in ts:
        roots = red.det_roots(t, half)
        K, M = red.pencil(t)
        direct = [p.value for p in solve_window(K, M, c.mean - half, c.mean + half)]
        if len(direct) != len(roots):
            raise NumericalError(
                f"t={t!r}: {len(roots)} reduced roots but {len(direct)} pencil eigenvalues in the window",
                "liapunov_schmidt",
            )
        for i, (r, d) in enumerate(zip(roots, direct)):
            rows.append([_fmt(t), i, _fmt(r), _fmt(d), _fmt(abs(r - d))])
            worst = max(worst, abs(r - d) / abs(d))
    out = run.path(run.args.out_file or "roots.csv")
    _write_csv(out, ["t", "root_index", "root", "pencil_eigenvalue", "abs_diff"], rows)
    run.report.update(
        file=out.name,
        cluster={"mean": c.mean, "multiplicity": c.multiplicity},
        window_half_width=half,
        max_relative_difference=worst,
    )


def cmd_generic(run):
    mesh, g = run.setup()
    c = run.cluster()
    gen = run.cfg.generic
    pert = None
    if gen["family"] == "scaling":
        pert = lambda k, child: g * float(np.random.default_rng(child).uniform(0.5, 2.0))
    res = genericity_experiment(
        mesh, g, c, gen["samples"], gen["seed"], gen["t_probe"],
        gap_tol=run.cfg.gap_tol, perturbation=pert, cluster_tol=run.cfg.cluster_tol,
    )
    rows = [
        [k, _fmt(gap), int(s), ";".join(_fmt(v) for v in sl)]
        for k, (gap, s, sl) in enumerate(zip(res.gaps, res.split, res.slopes))
    ]
    out = run.path(run.args.out_file or "generic.csv")
    _write_csv(out, ["sample", "min_gap", "split", "slopes"], rows)
    run.report.update(
        file=out.name,
        cluster={"mean": c.mean, "multiplicity": c.multiplicity},
        split_fraction=res.split_fraction,
        probes=[{"sample": k, "measured_gap": gap, "confirmed": ok} for k, gap, ok in res.probes],
    )


def cmd_verify_calculus(run):
    calc = run.cfg.calculus
    rows, orders = run_suite(calc["suite"], calc["steps"])
    out = run.path(run.args.out_file or "report.csv")

    def pt(p):
        return p if isinstance(p, str) else f"{p[0]!r};{p[1]!r}"

    _write_csv(
        out,
        ["identity", "point", "step", "residual", "fitted_order"],
        [[ident, pt(p), _fmt(h), _fmt(r), _fmt(orders[(ident, p)])] for ident, p, h, r in rows],
    )
    finest = min(calc["steps"])
    run.report.update(
        file=out.name,
        suite=calc["suite"],
        steps=calc["steps"],
        orders={f"{ident}@{pt(p)}": o for (ident, p), o in orders.items()},
        max_residual_at_finest=max(r for _, _, h, r in rows if h == finest),
    )


COMMANDS = {
    "eigs": cmd_eigs,
    "hadamard": cmd_hadamard,
    "branches": cmd_branches,
    "ls": cmd_ls,
    "generic": cmd_generic,
    "verify-calculus": cmd_verify_calculus,
}


# ---------------------------------------------------------------------------
# argument parsing


def _mesh_flag(text):
    """``square:32``, ``disk:24``, ``annulus:8`` or a mesh file path."""
    shape, sep, n = text.partition(":")
    if sep and shape in ("square", "disk", "annulus"):
        try:
            return {"shape": shape, "n": int(n)}
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad resolution in {text!r}") from None
    return {"path": text}


def _json_flag(text):
    """Inline JSON, a JSON file path, or a shorthand ``kind[:a,b,...]``."""
    t = text.strip()
    if t.startswith("{"):
        try:
            return json.loads(t)
        except json.JSONDecodeError as exc:
            raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None
    p = Path(t)
    if p.suffix == ".json" or p.is_file():
        try:
            return json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise argparse.ArgumentTypeError(f"cannot read {t}: {exc}") from None
    kind, _, rest = t.partition(":")
    try:
        args = [float(a) for a in rest.split(",")] if rest else []
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shorthand {text!r}") from None
    return {"kind": kind, "args": args}


def _metric_from_flag(v):
    if "kind" not in v:
        return v
    kind, a = v["kind"], v["args"]
    if kind == "diag" and len(a) == 2:
        return {"type": "diag", "a": a[0], "b": a[1]}
    return {"type": kind}


def _perturb_from_flag(v):
    if "kind" not in v:
        return v
    kind, a = v["kind"], v["args"]
    if kind in ("constant", "diag"):
        if kind == "diag" and len(a) == 2:
            a = [a[0], 0.0, a[1]]
        if len(a) != 3:
            raise ValidationError("constant perturbation needs c11,c12,c22 (or diag:a,b)")
        return {"type": "constant", "c11": a[0], "c12": a[1], "c22": a[2]}
    if kind == "random":
        return {"type": "random", "seed": int(a[0]) if a else 0}
    if kind == "scaling":
        return {"type": "scaling", "c": a[0] if a else 1.0}
    return {"type": kind}


def _float_csv(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(sub, default_out):
    sub.add_argument("--mesh", type=_mesh_flag, help="square:N, disk:RINGS, annulus:RINGS or a mesh file")
    sub.add_argument("--metric", type=_json_flag, help="metric descriptor: JSON, file, identity or diag:a,b")
    sub.add_argument("--cluster-index", type=int, help="index of the cluster in the clustered spectrum")
    sub.add_argument("--cluster-window", type=_float_csv, help="lo,hi eigenvalue window holding one cluster")
    sub.add_argument("--k", type=int, help="number of eigenpairs to compute")
    sub.add_argument("--cluster-tol", type=float, help="relative gap below which eigenvalues cluster")
    sub.add_argument("--out", dest="out_file", help=f"output file name (default {default_out})")


def build_parser():
    p = argparse.ArgumentParser(prog="neumann-perturb", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--deterministic", action="store_true", help="omit timestamps so reruns are byte-identical")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent solves")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = p.add_subparsers(dest="command", required=True)

    mesh = subs.add_parser("mesh", help="mesh utilities")
    msubs = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = msubs.add_parser("gen", help="generate a mesh file")
    gen.add_argument("--shape", choices=["square", "disk", "annulus"])
    gen.add_argument("--n", type=int, help="subdivisions (square) or rings (disk, annulus)")
    gen.add_argument("--out", dest="out_file", help="mesh file (default mesh.txt)")

    s = subs.add_parser("eigs", help="lowest eigenpairs and clusters")
    _common(s, "spectrum.csv")

    s = subs.add_parser("hadamard", help="first-variation matrix of a cluster")
    _common(s, "matrix.csv")
    s.add_argument("--perturb", type=_json_flag, help="JSON, file, or zero|constant:a,b,c|diag:a,b|random:SEED|scaling:c|residual")
    s.add_argument("--method", choices=["geometric", "discrete"], default="geometric")

    s = subs.add_parser("branches", help="track eigenvalue branches in t")
    _common(s, "branches.csv")
    s.add_argument("--perturb", type=_json_flag)
    s.add_argument("--tmin", type=float)
    s.add_argument("--tmax", type=float)
    s.add_argument("--steps", type=int, help="number of grid points (t = 0 is always added)")

    s = subs.add_parser("ls", help="reduced-equation roots vs direct eigensolves")
    _common(s, "roots.csv")
    s.add_argument("--perturb", type=_json_flag)
    s.add_argument("--t", type=_float_csv, help="t values, comma separated")
    s.add_argument("--window", type=float, help="half-width of the root window")

    s = subs.add_parser("generic", help="split fraction over random perturbations")
    _common(s, "generic.csv")
    s.add_argument("--samples", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--t-probe", type=float)
    s.add_argument("--family", choices=["random", "scaling"])
    s.add_argument("--gap-tol", type=float)

    s = subs.add_parser("verify-calculus", help="finite-difference identity checks")
    s.add_argument("--suite", choices=sorted(SUITES))
    s.add_argument("--steps", type=_float_csv)
    s.add_argument("--out", dest="out_file", help="output file (default report.csv)")
    return p


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from None


def merge_flags(raw, args):
    """Overlay command-line flags on the config dict (flags win)."""
    raw = copy.deepcopy(raw)
    get = lambda name: getattr(args, name, None)
    if args.out_dir is not None:
        raw["output"] = args.out_dir
    if args.command == "mesh":
        mesh = dict(raw.get("mesh", {})) if isinstance(raw.get("mesh"), dict) else {}
        if get("shape") is not None:
            mesh = {"shape": get("shape"), "n": mesh.get("n", 16)}
        if get("n") is not None:
            mesh["n"] = get("n")
        if mesh:
            raw["mesh"] = mesh
        return raw
    if get("mesh") is not None:
        raw["mesh"] = get("mesh")
    if get("metric") is not None:
        raw["metric"] = _metric_from_flag(get("metric"))
    if get("perturb") is not None:
        raw["perturbation"] = _perturb_from_flag(get("perturb"))
    if get("cluster_index") is not None:
        raw["cluster"] = {"index": get("cluster_index")}
    if get("cluster_window") is not None:
        raw["cluster"] = {"window": get("cluster_window")}
    if get("k") is not None:
        raw["k"] = get("k")
    tol = dict(raw.get("tolerances", {})) if isinstance(raw.get("tolerances"), dict) else {}
    if get("cluster_tol") is not None:
        tol["cluster_tol"] = get("cluster_tol")
    if get("gap_tol") is not None:
        tol["gap_tol"] = get("gap_tol")
    if tol:
        raw["tolerances"] = tol
    if args.command == "branches" and any(get(a) is not None for a in ("tmin", "tmax", "steps")):
        grid = raw.get("t_grid") if isinstance(raw.get("t_grid"), list) and raw.get("t_grid") else [-0.04, 0.04]
        tmin = get("tmin") if get("tmin") is not None else min(grid)
        tmax = get("tmax") if get("tmax") is not None else max(grid)
        steps = get("steps") if get("steps") is not None else 9
        if steps < 2 or not tmin < tmax:
            raise ConfigError("/t_grid", "need tmin < tmax and at least 2 steps")
        raw["t_grid"] = np.linspace(tmin, tmax, steps).tolist()
    section = lambda name: dict(raw.get(name, {})) if isinstance(raw.get(name), dict) else {}
    if args.command == "ls":
        ls = section("ls")
        if get("t") is not None:
            ls["t"] = get("t")
        if get("window") is not None:
            ls["window"] = get("window")
        raw["ls"] = ls
    if args.command == "generic":
        gen = section("generic")
        for flag, key in (("samples", "samples"), ("seed", "seed"), ("t_probe", "t_probe"), ("family", "family")):
            if get(flag) is not None:
                gen[key] = get(flag)
        raw["generic"] = gen
    if args.command == "verify-calculus":
        calc = section("calculus")
        if get("suite") is not None:
            calc["suite"] = get("suite")
        if get("steps") is not None:
            calc["steps"] = get("steps")
        raw["calculus"] = calc
    return raw


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("", "--threads must be >= 1")
        raw = load_config(args.config) if args.config else {}
        cfg = validate_config(merge_flags(raw, args))
        run = Run(cfg, args)
        if args.command == "mesh":
            cmd_mesh_gen(run)
        else:
            COMMANDS[args.command](run)
        run.finish()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure in module {exc.module}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
