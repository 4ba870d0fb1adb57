"""Experiment configuration, staged runs and report export.

A run executes, in order: load the space, measure its structural constants,
solve (or load) a trajectory, sweep the energy inequality and reduce the
oscillation around a point. Each stage writes its payload to the output
directory; ``manifest.json`` records the config hash, versions, timestamps,
per-stage status and a hash inventory of every file written. Timestamps
appear only in the manifest, so payload files are byte-identical across
runs of the same config.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .calculus import read_trajectory, write_trajectory
from .degiorgi import (
    IterationTrace,
    OscReport,
    build_trace,
    classify_alternative,
    dgc_sweep,
    fit_C0,
    oscillation_reduce,
    theta_scaling,
    _check_outer_margin,
)
from .errors import ConfigError, DGLabError, MarginError
from .evolution import SolverConfig, generate_test_field, p_energy, solve_trajectory
from .space import load_space, structural_report

STAGES = ("space", "structural", "trajectory", "dgc", "reduction", "emit")
FORMATS = ("json", "csv")
OUT_ENV = "DGLAB_OUT"


# ------------------------------------------------------------------ config

def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _opt(check):
    return lambda x: x is None or check(x)


def _window(x):
    return (isinstance(x, (list, tuple)) and len(x) == 2 and all(_is_num(v) for v in x)
            and 0 < x[0] <= x[1])


# section -> key -> (default, check, description)
_SCHEMA = {
    "initial": {
        "kind": ("kink", lambda x: x in ("holder_profile", "checkerboard", "random", "kink"),
                 "one of holder_profile, checkerboard, random, kink"),
        "beta": (1.0, lambda x: _is_num(x) and 0 < x <= 1, "a number in (0, 1]"),
        "x0": (None, _opt(_is_int), "a node id or null"),
        "seed": (0, _is_int, "an integer"),
        "n_frames": (3, lambda x: _is_int(x) and x >= 2, "an integer >= 2"),
        "time_step": (1.0, lambda x: _is_num(x) and x > 0, "a positive number"),
    },
    "structural": {
        "enabled": (True, lambda x: isinstance(x, bool), "a boolean"),
        "window": (None, _opt(_window), "null or [r_min, r_max] with 0 < r_min <= r_max"),
        "q": (None, _opt(lambda x: _is_num(x) and x >= 1), "null or a number >= 1"),
    },
    "dgc": {
        "enabled": (True, lambda x: isinstance(x, bool), "a boolean"),
        "n_instances": (60, lambda x: _is_int(x) and x >= 1, "a positive integer"),
        "variant": ("full", lambda x: x in ("full", "limit"), "full or limit"),
    },
    "reduction": {
        "enabled": (True, lambda x: isinstance(x, bool), "a boolean"),
        "x0": (None, _opt(_is_int), "a node id or null"),
        "t0": (None, _opt(_is_num), "a time or null"),
        "r": (None, _opt(lambda x: _is_num(x) and x > 0), "a positive radius or null"),
        "levels": (3, lambda x: _is_int(x) and x >= 1, "a positive integer"),
        "lambda_max": (24, lambda x: _is_int(x) and x >= 1, "a positive integer"),
        "s_max": (20, lambda x: _is_int(x) and x >= 1, "a positive integer"),
        "n_grid": (16, lambda x: _is_int(x) and x >= 1, "a positive integer"),
        "n_max": (12, lambda x: _is_int(x) and x >= 2, "an integer >= 2"),
        "kappa": (None, _opt(_is_num), "a number or null"),
        "C0": (None, _opt(lambda x: _is_num(x) and x >= 1), "null or a number >= 1"),
        "tau_dilation": (1.0, lambda x: _is_num(x) and x >= 1, "a number >= 1"),
    },
    "output": {
        "dir": (None, _opt(lambda x: isinstance(x, str)), "a path or null"),
        "format": ("json", lambda x: x in FORMATS, "json or csv"),
    },
}
_TOP = {"space", "solver", "steps", "trajectory", "seed"} | set(_SCHEMA)


def _section(name, given, problems):
    schema = _SCHEMA[name]
    out = {k: copy.deepcopy(v[0]) for k, v in schema.items()}
    if given is None:
        return out
    if not isinstance(given, dict):
        problems.append(f"{name}: must be an object")
        return out
    for key, val in given.items():
        if key not in schema:
            problems.append(f"{name}.{key}: unknown field")
            continue
        _, check, desc = schema[key]
        if not check(val):
            problems.append(f"{name}.{key}: must be {desc}, got {val!r}")
            continue
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment configuration.

    ``space`` is a path to a graph JSON file (relative paths resolve against
    ``base_dir``) or an inline graph object. ``steps = 0`` uses the synthetic
    field from ``initial`` as the trajectory; otherwise its first frame is
    evolved for ``steps`` minimizing-movement steps. ``trajectory`` names a
    CSV file to load instead.
    """

    space: object
    solver: SolverConfig
    steps: int = 20
    trajectory: str | None = None
    seed: int = 0
    initial: dict = field(default_factory=lambda: _section("initial", None, []))
    structural: dict = field(default_factory=lambda: _section("structural", None, []))
    dgc: dict = field(default_factory=lambda: _section("dgc", None, []))
    reduction: dict = field(default_factory=lambda: _section("reduction", None, []))
    output: dict = field(default_factory=lambda: _section("output", None, []))
    base_dir: str = field(default=".", compare=False)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        """Validate ``d`` and raise :class:`ConfigError` listing every problem."""
        if not isinstance(d, dict):
            raise ConfigError(["config must be a JSON object"])
        problems = []
        for key in sorted(set(d) - _TOP):
            problems.append(f"{key}: unknown field")
        space = d.get("space")
        if space is None:
            problems.append("space: required")
        elif isinstance(space, str):
            path = Path(space) if Path(space).is_absolute() else Path(base_dir) / space
            if not path.is_file():
                problems.append(f"space: file {str(path)!r} does not exist")
        elif not isinstance(space, dict):
            problems.append("space: must be a path or an inline graph object")
        solver = None
        sd = d.get("solver", {})
        if not isinstance(sd, dict):
            problems.append("solver: must be an object")
        else:
            try:
                solver = SolverConfig.from_dict(sd)
            except ConfigError as exc:
                problems.extend(f"solver: {msg}" for msg in exc.problems)
            except (TypeError, ValueError) as exc:
                problems.append(f"solver: {exc}")
        steps = d.get("steps", 20)
        if not (_is_int(steps) and steps >= 0):
            problems.append(f"steps: must be a non-negative integer, got {steps!r}")
        traj = d.get("trajectory")
        if traj is not None:
            if not isinstance(traj, str):
                problems.append("trajectory: must be a path or null")
            else:
                path = Path(traj) if Path(traj).is_absolute() else Path(base_dir) / traj
                if not path.is_file():
                    problems.append(f"trajectory: file {str(path)!r} does not exist")
        seed = d.get("seed", 0)
        if not _is_int(seed):
            problems.append(f"seed: must be an integer, got {seed!r}")
        sections = {name: _section(name, d.get(name), problems) for name in _SCHEMA}
        if problems:
            raise ConfigError(problems)
        return cls(copy.deepcopy(space), solver, steps, traj, seed, base_dir=str(base_dir), **sections)

    @classmethod
    def from_json(cls, text, base_dir="."):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON: {exc}"]) from None
        return cls.from_dict(d, base_dir)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError([f"config file {str(path)!r} does not exist"])
        return cls.from_json(path.read_text(), base_dir=path.parent)

    def to_dict(self):
        return {"space": copy.deepcopy(self.space), "solver": self.solver.to_dict(), "steps": self.steps,
                "trajectory": self.trajectory, "seed": self.seed,
                **{name: copy.deepcopy(getattr(self, name)) for name in _SCHEMA}}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self):
        """SHA-256 of the canonical JSON serialization."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def resolve(self, rel):
        path = Path(rel)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def load_space(self):
        if isinstance(self.space, dict):
            return load_space(self.space)
        return load_space(self.resolve(self.space))


# ----------------------------------------------------------------- export

def to_jsonable(obj):
    """Convert reports, dataclasses and numpy values into JSON-ready objects."""
    if hasattr(obj, "to_dict") and callable(obj.to_dict):
        return to_jsonable(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


@dataclass
class DGCSweepReport:
    instances: list
    summary: dict

    def to_dict(self):
        return {"summary": self.summary, "instances": self.instances}


def report_tables(report):
    """CSV tables ``{suffix: (header, rows)}`` for a report object."""
    if isinstance(report, IterationTrace):
        rows = [(n, report.r[n], report.k[n], report.Y[n]) for n in range(len(report.Y))]
        return {"": (["n", "r_n", "k_n", "Y_n"], rows)}
    if isinstance(report, OscReport):
        rows = [(rd.index, rd.rho, rd.osc, rd.sigma) for rd in report.rounds]
        return {"": (["round", "r", "osc", "sigma"], rows)}
    if isinstance(report, DGCSweepReport):
        cols = ["center", "r1", "r2", "tau2", "tau1", "tau0", "k", "sign", "C"]
        rows = [[i] + [inst[c] for c in cols] for i, inst in enumerate(report.instances)]
        return {"": (["index"] + cols, rows)}
    flat = _flatten(to_jsonable(report))
    return {"": (["key", "value"], sorted(flat.items()))}


def empty_trace_table():
    return ["n", "r_n", "k_n", "Y_n"], []


def _flatten(d, prefix=""):
    out = {}
    if isinstance(d, dict):
        for k, v in d.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(d, list):
        for i, v in enumerate(d):
            out.update(_flatten(v, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = d
    return out


def render_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def render_json(report):
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2) + "\n"


def default_out_dir():
    return Path(os.environ.get(OUT_ENV, "dglab_out"))


def export_report(report, format="json", out_dir=None, name="report"):
    """Write ``report`` as ``<name>.json`` or CSV table(s) ``<name>.csv``.

    Floats in CSV use 17 significant digits; JSON floats use the shortest
    exact representation. ``out_dir`` defaults to ``$DGLAB_OUT`` (else
    ``./dglab_out``). Returns the written paths.
    """
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {format!r}")
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if format == "json":
        path = out / f"{name}.json"
        path.write_text(render_json(report))
        paths.append(path)
    else:
        for suffix, (header, rows) in report_tables(report).items():
            path = out / f"{name}{suffix}.csv"
            path.write_text(render_csv(header, rows))
            paths.append(path)
    return paths


# ---------------------------------------------------------------- running

@dataclass
class StageRecord:
    name: str
    status: str = "pending"
    message: str = ""
    error_type: str | None = None
    seconds: float = 0.0
    files: list = field(default_factory=list)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    backend: str
    started: str
    finished: str | None
    stages: list
    files: dict
    out_dir: str

    @property
    def ok(self):
        return all(s.status in ("ok", "skipped") for s in self.stages)

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self):
        return asdict(self)


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def center_node(space):
    """Node id of smallest eccentricity (smallest id on ties)."""
    ecc = np.array([space.distances_from(i).max() for i in range(space.n_nodes)])
    return int(space.node_ids[int(np.argmin(ecc))])


def build_trajectory(config, space):
    """Trajectory from ``config``: loaded, synthetic (``steps = 0``) or solved."""
    if config.trajectory is not None:
        return read_trajectory(config.resolve(config.trajectory), space)
    ini = config.initial
    seed = ini["seed"] if ini["seed"] else config.seed
    field_ = generate_test_field(space, ini["kind"], n_frames=ini["n_frames"], time_step=ini["time_step"],
                                 beta=ini["beta"], x0=ini["x0"], seed=seed)
    if config.steps == 0:
        return field_
    return solve_trajectory(space, field_.frames[0], config.steps, config.solver)


def auto_radius(u, x0, t0, p, lam=1, tau_dilation=1.0):
    """Largest dyadic radius below ``diam/4`` whose intrinsic cylinder fits in the history."""
    space = u.space
    dist = space.distances_from(space.idx(x0))
    ell = space.max_edge_length
    keep = u.times <= t0 + 1e-9 * u.time_step
    r = max(space.diameter / 4, ell)
    while True:
        vals = u.frames[np.ix_(keep, dist < 2 * tau_dilation * r)]
        osc = float(vals.max() - vals.min())
        if osc <= 0:
            return r
        try:
            _check_outer_margin(u, t0, r, theta_scaling(osc, lam, p, float(vals.min())))
            return r
        except MarginError:
            if r / 2 < ell:
                return r
            r /= 2


def reduction_point(config, u, p):
    red = config.reduction
    x0 = red["x0"] if red["x0"] is not None else center_node(u.space)
    t0 = float(red["t0"]) if red["t0"] is not None else float(u.times[-1])
    r = float(red["r"]) if red["r"] is not None else auto_radius(u, x0, t0, p, 1, red["tau_dilation"])
    return x0, t0, r


def _write(out_dir, name, text, stage):
    path = Path(out_dir) / name
    path.write_text(text)
    stage.files.append(name)
    return path


def _emit(report, fmt, out_dir, name, stage):
    for path in export_report(report, fmt, out_dir, name):
        stage.files.append(path.name)


class _Context:
    def __init__(self, config, out_dir):
        self.config = config
        self.out_dir = Path(out_dir)
        self.fmt = config.output["format"]
        self.space = None
        self.u = None
        self.payload = {}


def _stage_space(ctx, rec):
    ctx.space = ctx.config.load_space()
    ctx.payload["space"] = {"n_nodes": ctx.space.n_nodes, "n_edges": ctx.space.n_edges,
                            "total_mass": ctx.space.total_mass, "diameter": ctx.space.diameter,
                            "max_edge_length": ctx.space.max_edge_length}


def _stage_structural(ctx, rec):
    s = ctx.config.structural
    if not s["enabled"]:
        return "structural stage disabled"
    window = tuple(s["window"]) if s["window"] is not None else None
    rep = structural_report(ctx.space, ctx.config.solver.p, window=window, q=s["q"], seed=ctx.config.seed)
    ctx.payload["structural"] = rep.to_dict()
    _emit(rep, ctx.fmt, ctx.out_dir, "structural", rec)


def _stage_trajectory(ctx, rec):
    ctx.u = build_trajectory(ctx.config, ctx.space)
    path = ctx.out_dir / "trajectory.csv"
    write_trajectory(ctx.u, path)
    rec.files.extend(["trajectory.csv", "trajectory.json"])
    energy = [p_energy(ctx.space, f, ctx.config.solver.p) for f in ctx.u.frames]
    ctx.payload["trajectory"] = {"n_frames": ctx.u.n_frames, "time_step": ctx.u.time_step,
                                 "t_start": ctx.u.t_start, "energy": energy}


def _stage_dgc(ctx, rec):
    d = ctx.config.dgc
    if not d["enabled"]:
        return "dgc stage disabled"
    inst, summary = dgc_sweep(ctx.u, n_instances=d["n_instances"], seed=ctx.config.seed,
                              p=ctx.config.solver.p, variant=d["variant"])
    rep = DGCSweepReport(inst, summary)
    ctx.payload["dgc"] = summary
    _emit(rep, ctx.fmt, ctx.out_dir, "dgc_sweep", rec)


def _stage_reduction(ctx, rec):
    red = ctx.config.reduction
    if not red["enabled"]:
        return "reduction stage disabled"
    p = ctx.config.solver.p
    x0, t0, r = reduction_point(ctx.config, ctx.u, p)
    rep = oscillation_reduce(ctx.u, x0, t0, r, lambda_max=red["lambda_max"], levels=red["levels"], p=p,
                             kappa=red["kappa"], C0=red["C0"], n_grid=red["n_grid"], s_max=red["s_max"],
                             tau_dilation=red["tau_dilation"], n_max=red["n_max"])
    ctx.payload["reduction"] = {"x0": x0, "t0": t0, "r": r, **to_jsonable(rep)}
    _emit(rep, ctx.fmt, ctx.out_dir, "osc_rounds", rec)
    trace = None
    if rep.rounds and rep.rounds[0].osc > 0:
        rd = rep.rounds[0]
        sc = theta_scaling(rd.osc, 1, p, rd.ess_inf)
        try:
            trace = build_trace(ctx.u, x0, t0, r, sc, "minus", red["n_max"], rep.kappa)
        except MarginError:
            trace = None
    if ctx.fmt == "csv":
        header, rows = report_tables(trace)[""] if trace is not None else empty_trace_table()
        _write(ctx.out_dir, "trace_minus.csv", render_csv(header, rows), rec)
    else:
        _write(ctx.out_dir, "trace_minus.json", render_json(trace.to_dict() if trace is not None else {}), rec)


_RUNNERS = {"space": _stage_space, "structural": _stage_structural, "trajectory": _stage_trajectory,
            "dgc": _stage_dgc, "reduction": _stage_reduction}
_NEEDS = {"structural": ("space",), "trajectory": ("space",), "dgc": ("trajectory",),
          "reduction": ("trajectory",)}


def run_experiment(config, out_dir=None, stages=None):
    """Run ``stages`` (default all) of ``config`` and return the :class:`RunManifest`.

    A failed stage records its error type and message; stages depending on
    it are skipped. ``emit`` writes ``report.json`` (all numeric payloads)
    and ``manifest.json``.
    """
    if out_dir is None:
        out_dir = config.output["dir"] if config.output["dir"] is not None else default_out_dir()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = list(STAGES) if stages is None else [s for s in STAGES if s in stages or s == "emit"]
    manifest = RunManifest(config.hash(), __version__, BACKEND, _now(), None,
                           [StageRecord(s) for s in wanted], {}, str(out_dir))
    ctx = _Context(config, out_dir)
    done = set()
    for rec in manifest.stages:
        if rec.name == "emit":
            continue
        missing = [n for n in _NEEDS.get(rec.name, ()) if n not in done]
        if missing:
            rec.status, rec.message = "skipped", f"requires {', '.join(missing)}"
            continue
        t = time.perf_counter()
        try:
            note = _RUNNERS[rec.name](ctx, rec)
            rec.status = "skipped" if note else "ok"
            rec.message = note or ""
            if not note:
                done.add(rec.name)
        except (DGLabError, ValueError, np.linalg.LinAlgError) as exc:
            rec.status, rec.error_type, rec.message = "failed", type(exc).__name__, str(exc)
            if os.environ.get("DGLAB_DEBUG"):
                traceback.print_exc()
        rec.seconds = time.perf_counter() - t
    emit = manifest.stage("emit")
    _write(out_dir, "report.json", render_json(ctx.payload), emit)
    emit.status = "ok"
    for rec in manifest.stages:
        for name in rec.files:
            manifest.files[name] = _sha256(out_dir / name)
    manifest.finished = _now()
    (out_dir / "manifest.json").write_text(render_json(manifest))
    return manifest


def classify_point(config, u):
    """Classification of the alternatives at the configured reduction point."""
    red = config.reduction
    p = config.solver.p
    x0, t0, r = reduction_point(config, u, p)
    space = u.space
    dist = space.distances_from(space.idx(x0))
    keep = u.times <= t0 + 1e-9 * u.time_step
    vals = u.frames[np.ix_(keep, dist < 2 * red["tau_dilation"] * r)]
    sc = theta_scaling(float(vals.max() - vals.min()), 1, p, float(vals.min()))
    kappa = 2 * p if red["kappa"] is None else red["kappa"]
    C0 = red["C0"] if red["C0"] is not None else fit_C0(u, x0, t0, r, sc, kappa, red["n_max"])
    cls = classify_alternative(u, x0, t0, r, sc, C0, kappa, red["n_grid"])
    return {"x0": x0, "t0": t0, "r": r, "C0": C0, "scaling": sc.to_dict(), **to_jsonable(cls)}
