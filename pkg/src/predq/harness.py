"""Experiment harness: config files, sweeps, CSV emission, validation.

The CLI front end glues the simulator and the analytic engine to a single
TOML experiment description.  Subcommands:

    simulate   run the discrete-event simulator over the configured grid
    analytic   evaluate the closed-form engine over the same grid
    sweep      run both and emit one combined CSV
    validate   run both and check analytic values against simulation CIs
    plotdata   split a results CSV into per-(source, policy) series files

Every emitted row echoes the full parameter point plus the seed that
produced it, so any single row can be re-run exactly.  Output rows are
buffered and written in grid order no matter how the worker pool schedules
the runs, which keeps repeated invocations byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

from .distributions import (
    Exponential,
    ExponentialPredictor,
    PerfectPredictor,
    PredictionModel,
    UniformPredictor,
    Weibull,
)
from .policy import (
    FCFS,
    OneBit,
    SPRPT,
    SkipPredict,
    DelayPredict,
    External,
    ServerTime,
)
from . import analytic as an
from . import simulator as sim

CSV_COLUMNS = [
    "policy", "cost_model", "lambda", "T", "L", "c1", "c2",
    "source", "metric", "value", "ci_low", "ci_high", "n_jobs", "seed", "flag",
]
METRICS = ["mean_T_short", "mean_T_long", "mean_T_all", "total_cost",
           "frac_long"]
SWEEP_AXES = ("lambda", "c2", "T", "L", "threshold")
_POLICY_ALIASES = {"1bit": "onebit", "one_bit": "onebit"}
_POLICY_ORDER = ["fcfs", "onebit", "sprpt", "skippredict", "delaypredict"]
_SEED_STRIDE = 1_000_003


class ConfigError(Exception):
    """Invalid experiment configuration (bad file, key, or value)."""


class _Abort(Exception):
    """Internal control flow: exit with .code after printing .message."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class ExperimentConfig:
    policies: list
    cost_model: str
    sweep: str | None
    grid: list
    params: dict
    service: dict
    predictor: dict
    sim: dict
    analytic: dict
    out: str | None = None


# ----- config parsing -------------------------------------------------------

_SCHEMA = {
    "experiment": {"policies", "cost_model", "sweep", "grid", "out"},
    "params": {"lambda", "c1", "c2", "T", "L"},
    "service": {"kind", "mean", "shape", "scale"},
    "predictor": {"cheap", "cheap_alpha", "expensive", "expensive_alpha"},
    "sim": {"n_jobs", "warmup_jobs", "replications", "seed", "queue_cap"},
    "analytic": {"rel_tol", "abs_tol", "max_depth", "memoize", "grid_points",
                 "tail_eps", "prediction_nodes"},
}

_PREDICTOR_NAMES = {"perfect", "uniform", "exponential"}


def preset_names():
    base = resources.files("predq").joinpath("presets")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".toml"))


def _read_config_text(source):
    if os.path.exists(source):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8")
    name = source[:-5] if source.endswith(".toml") else source
    ref = resources.files("predq").joinpath("presets", f"{name}.toml")
    if ref.is_file():
        return ref.read_text(encoding="utf-8")
    raise ConfigError(
        f"config '{source}' is neither a file nor a preset "
        f"(presets: {', '.join(preset_names())})")


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _num(table, key, val, lo=None, hi=None, allow_none=False):
    if val is None:
        _require(allow_none, f"missing required key '{table}.{key}'")
        return None
    _require(isinstance(val, (int, float)) and not isinstance(val, bool),
             f"'{table}.{key}' must be a number, got {val!r}")
    v = float(val)
    _require(math.isfinite(v), f"'{table}.{key}' must be finite")
    if lo is not None:
        _require(v >= lo, f"'{table}.{key}' must be >= {lo}, got {v}")
    if hi is not None:
        _require(v <= hi, f"'{table}.{key}' must be <= {hi}, got {v}")
    return v


def _int(table, key, val, lo, default=None):
    if val is None:
        return default
    _require(isinstance(val, int) and not isinstance(val, bool),
             f"'{table}.{key}' must be an integer, got {val!r}")
    _require(val >= lo, f"'{table}.{key}' must be >= {lo}, got {val}")
    return val


def canonical_policy(name):
    _require(isinstance(name, str), f"policy name must be a string, got {name!r}")
    low = name.strip().lower()
    low = _POLICY_ALIASES.get(low, low)
    _require(low in _POLICY_ORDER,
             f"unknown policy '{name}' (choose from {', '.join(_POLICY_ORDER)})")
    return low


def parse_config(source):
    """Load and validate a TOML experiment file (or packaged preset name)."""
    text = _read_config_text(source)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    for table, body in raw.items():
        _require(table in _SCHEMA, f"unknown table '[{table}]'")
        _require(isinstance(body, dict), f"'[{table}]' must be a table")
        for key in body:
            _require(key in _SCHEMA[table], f"unknown key '{table}.{key}'")

    exp = raw.get("experiment", {})
    pol_raw = exp.get("policies")
    _require(isinstance(pol_raw, list) and pol_raw,
             "missing required key 'experiment.policies' (nonempty list)")
    policies = [canonical_policy(p) for p in pol_raw]
    _require(len(set(policies)) == len(policies),
             "duplicate entries in 'experiment.policies'")

    cm = exp.get("cost_model", "external")
    _require(isinstance(cm, str), "'experiment.cost_model' must be a string")
    cm = cm.strip().lower()
    if cm == "servertime":
        cm = "server"
    _require(cm in ("external", "server"),
             f"'experiment.cost_model' must be external or server, got '{cm}'")

    sweep = exp.get("sweep")
    grid = exp.get("grid")
    if sweep is not None:
        _require(isinstance(sweep, str) and sweep in SWEEP_AXES,
                 f"'experiment.sweep' must be one of {', '.join(SWEEP_AXES)}")
        _require(isinstance(grid, list) and grid,
                 "'experiment.grid' must be a nonempty list when sweeping")
        vals = [_num("experiment", "grid", v, lo=0.0) for v in grid]
        _require(all(b > a for a, b in zip(vals, vals[1:])),
                 "'experiment.grid' must be strictly increasing")
        _require(sweep != "lambda" or all(v > 0.0 for v in vals),
                 "'experiment.grid' for a lambda sweep must be positive")
        grid = vals
    else:
        _require(grid is None,
                 "'experiment.grid' given without 'experiment.sweep'")
        grid = []

    out = exp.get("out")
    if out is not None:
        _require(isinstance(out, str) and out, "'experiment.out' must be a path")

    prm = raw.get("params", {})
    params = {
        "lambda": _num("params", "lambda", prm.get("lambda"), lo=0.0,
                       allow_none=(sweep == "lambda")),
        "c1": _num("params", "c1", prm.get("c1", 0.0), lo=0.0),
        "c2": _num("params", "c2", prm.get("c2", 0.0), lo=0.0),
        "T": _num("params", "T", prm.get("T", 1.0), lo=0.0),
        "L": _num("params", "L", prm.get("L", 1.0), lo=0.0),
    }
    if params["lambda"] is None:
        params["lambda"] = math.nan  # placeholder, overwritten by the sweep
    else:
        _require(sweep == "lambda" or params["lambda"] > 0.0,
                 "'params.lambda' must be > 0")

    svc = raw.get("service", {})
    kind = svc.get("kind", "exponential")
    _require(isinstance(kind, str), "'service.kind' must be a string")
    kind = kind.strip().lower()
    if kind == "exponential":
        _require("shape" not in svc and "scale" not in svc,
                 "'service.shape'/'service.scale' only apply to weibull")
        service = {"kind": kind,
                   "mean": _num("service", "mean", svc.get("mean", 1.0),
                                lo=1e-12)}
    elif kind == "weibull":
        _require("mean" not in svc, "'service.mean' only applies to exponential")
        service = {"kind": kind,
                   "shape": _num("service", "shape", svc.get("shape", 0.5),
                                 lo=1e-12),
                   "scale": _num("service", "scale", svc.get("scale", 0.5),
                                 lo=1e-12)}
    else:
        raise ConfigError(
            f"'service.kind' must be exponential or weibull, got '{kind}'")

    prd = raw.get("predictor", {})
    predictor = {}
    for role in ("cheap", "expensive"):
        pname = prd.get(role, "perfect")
        _require(isinstance(pname, str) and pname.strip().lower() in _PREDICTOR_NAMES,
                 f"'predictor.{role}' must be one of {', '.join(sorted(_PREDICTOR_NAMES))}")
        pname = pname.strip().lower()
        alpha = prd.get(f"{role}_alpha")
        if pname == "uniform":
            aval = _num("predictor", f"{role}_alpha", alpha)
            _require(0.0 < aval < 1.0,
                     f"'predictor.{role}_alpha' must lie in (0, 1)")
        else:
            _require(alpha is None,
                     f"'predictor.{role}_alpha' only applies to uniform")
            aval = None
        predictor[role] = pname
        predictor[f"{role}_alpha"] = aval

    simtab = raw.get("sim", {})
    sim_settings = {
        "n_jobs": _int("sim", "n_jobs", simtab.get("n_jobs"), 100,
                       default=100_000),
        "warmup_jobs": _int("sim", "warmup_jobs", simtab.get("warmup_jobs"), 0,
                            default=None),
        "replications": _int("sim", "replications",
                             simtab.get("replications"), 1, default=10),
        "seed": _int("sim", "seed", simtab.get("seed"), 0, default=0),
        "queue_cap": _int("sim", "queue_cap", simtab.get("queue_cap"), 1000,
                          default=1_000_000),
    }

    antab = raw.get("analytic", {})
    analytic_settings = {}
    if "rel_tol" in antab:
        analytic_settings["rel_tol"] = _num("analytic", "rel_tol",
                                            antab["rel_tol"], lo=1e-15)
    if "abs_tol" in antab:
        analytic_settings["abs_tol"] = _num("analytic", "abs_tol",
                                            antab["abs_tol"], lo=0.0)
    if "max_depth" in antab:
        analytic_settings["max_depth"] = _int("analytic", "max_depth",
                                              antab["max_depth"], 10)
    if "memoize" in antab:
        _require(isinstance(antab["memoize"], bool),
                 "'analytic.memoize' must be a boolean")
        analytic_settings["memoize"] = antab["memoize"]
    if "grid_points" in antab:
        analytic_settings["grid_points"] = _int("analytic", "grid_points",
                                                antab["grid_points"], 50)
    if "tail_eps" in antab:
        analytic_settings["tail_eps"] = _num("analytic", "tail_eps",
                                             antab["tail_eps"], lo=1e-16)
    if "prediction_nodes" in antab:
        analytic_settings["prediction_nodes"] = _int(
            "analytic", "prediction_nodes", antab["prediction_nodes"], 4)

    return ExperimentConfig(policies=policies, cost_model=cm, sweep=sweep,
                            grid=grid, params=params, service=service,
                            predictor=predictor, sim=sim_settings,
                            analytic=analytic_settings, out=out)


# ----- experiment expansion -------------------------------------------------


def expand_points(cfg):
    """The grid of fixed parameter points this experiment visits, in order."""
    if not cfg.sweep:
        return [dict(cfg.params)]
    pts = []
    for v in cfg.grid:
        p = dict(cfg.params)
        if cfg.sweep == "threshold":
            p["T"] = v
            p["L"] = v
        else:
            p[cfg.sweep] = v
        pts.append(p)
    return pts


def make_distribution(service):
    if service["kind"] == "exponential":
        return Exponential(mean=service["mean"])
    return Weibull(shape=service["shape"], scale=service["scale"])


def _make_predictor(name, alpha):
    if name == "perfect":
        return PerfectPredictor()
    if name == "exponential":
        return ExponentialPredictor()
    return UniformPredictor(alpha=alpha)


def make_prediction_model(cfg, dist, point):
    cheap = _make_predictor(cfg.predictor["cheap"],
                            cfg.predictor["cheap_alpha"])
    expensive = _make_predictor(cfg.predictor["expensive"],
                                cfg.predictor["expensive_alpha"])
    return PredictionModel(service=dist, cheap=cheap, expensive=expensive,
                           threshold=point["T"])


def make_policy(name, point):
    if name == "fcfs":
        return FCFS()
    if name == "onebit":
        return OneBit(T=point["T"])
    if name == "sprpt":
        return SPRPT()
    if name == "skippredict":
        return SkipPredict(T=point["T"])
    return DelayPredict(L=point["L"])


def make_cost_model(cfg, point):
    cls = ServerTime if cfg.cost_model == "server" else External
    return cls(c1=point["c1"], c2=point["c2"])


def point_seed(root, grid_idx, policy_idx):
    """Deterministic per-(grid point, policy) seed, echoed in CSV rows."""
    return root * _SEED_STRIDE + 101 * grid_idx + policy_idx


def quad_config(cfg):
    return an.QuadratureConfig(**cfg.analytic)


# ----- CSV plumbing ---------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows, out_path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(col)) for col in CSV_COLUMNS])
    text = buf.getvalue()
    if out_path:
        parent = os.path.dirname(out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _base_row(policy_name, cfg, point, source, seed, n_jobs):
    return {
        "policy": policy_name,
        "cost_model": cfg.cost_model,
        "lambda": point["lambda"],
        "T": point["T"],
        "L": point["L"],
        "c1": point["c1"],
        "c2": point["c2"],
        "source": source,
        "n_jobs": n_jobs,
        "seed": seed,
        "flag": "",
    }


def _metric_rows(base, values, cis, flag=""):
    rows = []
    for metric in METRICS:
        row = dict(base)
        row["metric"] = metric
        row["value"] = values[metric]
        lo, hi = cis[metric]
        row["ci_low"] = lo
        row["ci_high"] = hi
        row["flag"] = flag
        rows.append(row)
    return rows


def _nan_rows(base, flag):
    nan = math.nan
    values = {m: nan for m in METRICS}
    cis = {m: (nan, nan) for m in METRICS}
    return _metric_rows(base, values, cis, flag=flag)


def _halfwidth(vals):
    return sim.t95_halfwidth(vals)


# ----- simulation side ------------------------------------------------------


def _sim_task(payload):
    """Run one (grid point, policy) simulation; returns its five CSV rows.

    Module-level so a process pool can pickle it; everything it touches is
    a frozen dataclass or plain data.
    """
    (policy_name, policy, model, dist, pm, simcfg, cfg, point, seed,
     force) = payload
    base = _base_row(policy_name, cfg, point, "sim", seed, simcfg.n_jobs)
    load = point["lambda"] * sim.expected_requirement(policy, model, dist, pm)
    try:
        stats = sim.run(policy, model, dist, pm, simcfg, force=force)
    except sim.QueueOverflowError:
        return _nan_rows(base, "overload")
    flag = stats.flag or ("unstable" if load >= 1.0 else "")
    cost, cost_hw = sim.total_cost_ci(stats, policy, model,
                                      point["c1"], point["c2"])
    values = {
        "mean_T_short": stats.mean_T_short,
        "mean_T_long": stats.mean_T_long,
        "mean_T_all": stats.mean_T_all,
        "total_cost": cost,
        "frac_long": stats.frac_long,
    }
    hws = {
        "mean_T_short": stats.hw_short,
        "mean_T_long": stats.hw_long,
        "mean_T_all": stats.hw_all,
        "total_cost": cost_hw,
        "frac_long": _halfwidth(stats.rep_frac),
    }
    cis = {m: (values[m] - hws[m], values[m] + hws[m]) for m in METRICS}
    return _metric_rows(base, values, cis, flag=flag)


def _sim_payloads(cfg, points, root_seed, force):
    payloads = []
    unstable = []
    dist = make_distribution(cfg.service)
    for gi, point in enumerate(points):
        pm = make_prediction_model(cfg, dist, point)
        model = make_cost_model(cfg, point)
        for pi, name in enumerate(cfg.policies):
            policy = make_policy(name, point)
            seed = point_seed(root_seed, gi, pi)
            simcfg = sim.SimConfig(
                lam=point["lambda"], n_jobs=cfg.sim["n_jobs"],
                warmup_jobs=cfg.sim["warmup_jobs"], seed=seed,
                replications=cfg.sim["replications"],
                queue_cap=cfg.sim["queue_cap"])
            load = point["lambda"] * sim.expected_requirement(
                policy, model, dist, pm)
            if load >= 1.0:
                unstable.append((name, point, load))
            payloads.append((name, policy, model, dist, pm, simcfg, cfg,
                             point, seed, force))
    return payloads, unstable


def _refuse_unstable(unstable):
    lines = ["refusing to simulate unstable points (use --force to override):"]
    for name, point, load in unstable:
        lines.append(
            f"  {name} at lambda={point['lambda']:g} T={point['T']:g} "
            f"L={point['L']:g} c1={point['c1']:g} c2={point['c2']:g}: "
            f"offered load {load:.4f} >= 1")
    raise _Abort(3, "\n".join(lines))


def _run_tasks(fn, payloads, jobs):
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, payloads))


def sim_rows(cfg, root_seed, jobs=1, force=False):
    points = expand_points(cfg)
    payloads, unstable = _sim_payloads(cfg, points, root_seed, force)
    if unstable and not force:
        _refuse_unstable(unstable)
    rows = []
    for chunk in _run_tasks(_sim_task, payloads, jobs):
        rows.extend(chunk)
    return rows


# ----- analytic side --------------------------------------------------------


def analytic_rows(cfg, root_seed):
    points = expand_points(cfg)
    qcfg = quad_config(cfg)
    dist = make_distribution(cfg.service)
    marks = tuple(sorted({p["L"] for p in points} | {p["T"] for p in points}))
    catalogs = {}
    rows = []
    for gi, point in enumerate(points):
        pm = make_prediction_model(cfg, dist, point)
        cat = catalogs.get(pm)
        if cat is None:
            cat = an.moments(dist, pm, cfg=qcfg, breakpoints=marks)
            catalogs[pm] = cat
        model = make_cost_model(cfg, point)
        for name in cfg.policies:
            policy = make_policy(name, point)
            base = _base_row(name, cfg, point, "analytic", root_seed, 0)
            try:
                res = an.overall_means_and_cost(policy, model, cat,
                                                point["lambda"])
            except an.InstabilityError:
                rows.extend(_nan_rows(base, "instability"))
                continue
            values = {m: res[m] for m in METRICS}
            cis = {m: (values[m], values[m]) for m in METRICS}
            rows.extend(_metric_rows(base, values, cis))
    return rows


# ----- subcommands ----------------------------------------------------------


def _resolve_out(args, cfg):
    if args.out:
        return args.out
    return cfg.out


def cmd_simulate(args):
    cfg = parse_config(args.config)
    root = args.seed if args.seed is not None else cfg.sim["seed"]
    rows = sim_rows(cfg, root, jobs=args.jobs, force=args.force)
    write_rows(rows, _resolve_out(args, cfg))
    return 0


def cmd_analytic(args):
    cfg = parse_config(args.config)
    root = args.seed if args.seed is not None else cfg.sim["seed"]
    rows = analytic_rows(cfg, root)
    write_rows(rows, _resolve_out(args, cfg))
    return 0


def cmd_sweep(args):
    cfg = parse_config(args.config)
    root = args.seed if args.seed is not None else cfg.sim["seed"]
    srows = sim_rows(cfg, root, jobs=args.jobs, force=args.force)
    arows = analytic_rows(cfg, root)
    write_rows(arows + srows, _resolve_out(args, cfg))
    return 0


def _validate_pairs(cfg, root, jobs):
    """Per-(point, policy) analytic dicts and simulation stats for validate."""
    points = expand_points(cfg)
    qcfg = quad_config(cfg)
    dist = make_distribution(cfg.service)
    marks = tuple(sorted({p["L"] for p in points} | {p["T"] for p in points}))
    catalogs = {}
    payloads, _ = _sim_payloads(cfg, points, root, force=False)
    stable = []
    results = []
    for payload in payloads:
        (name, policy, model, _dist, pm, simcfg, _cfg, point, seed,
         _force) = payload
        load = point["lambda"] * sim.expected_requirement(policy, model,
                                                          dist, pm)
        if load < 1.0:
            stable.append(payload)
            results.append(None)
        else:
            results.append("unstable")
    sim_out = iter(_run_tasks(_sim_task, stable, jobs))
    merged = [next(sim_out) if r is None else r for r in results]

    pairs = []
    idx = 0
    for point in points:
        pm = make_prediction_model(cfg, dist, point)
        cat = catalogs.get(pm)
        if cat is None:
            cat = an.moments(dist, pm, cfg=qcfg, breakpoints=marks)
            catalogs[pm] = cat
        model = make_cost_model(cfg, point)
        for name in cfg.policies:
            policy = make_policy(name, point)
            try:
                ares = an.overall_means_and_cost(policy, model, cat,
                                                 point["lambda"])
            except an.InstabilityError:
                ares = "unstable"
            pairs.append((name, point, ares, merged[idx]))
            idx += 1
    return pairs


def _verdicts(name, point, ares, srows):
    """Yield (metric, analytic, sim, lo, hi, verdict) for one pairing."""
    if ares == "unstable" or srows == "unstable":
        for metric in METRICS:
            yield metric, math.nan, math.nan, math.nan, math.nan, "unstable"
        return
    by_metric = {r["metric"]: r for r in srows}
    for metric in METRICS:
        a = ares[metric]
        row = by_metric[metric]
        v, lo, hi = row["value"], row["ci_low"], row["ci_high"]
        if row["flag"]:
            verdict = "unstable"
        elif math.isnan(a) and math.isnan(v):
            verdict = "n/a"
        elif math.isnan(a) != math.isnan(v):
            verdict = "FAIL"
        elif math.isnan(lo) or math.isnan(hi):
            verdict = "n/a"
        elif lo <= a <= hi:
            verdict = "pass"
        else:
            verdict = "FAIL"
        yield metric, a, v, lo, hi, verdict


def cmd_validate(args):
    cfg = parse_config(args.config)
    root = args.seed if args.seed is not None else cfg.sim["seed"]
    pairs = _validate_pairs(cfg, root, args.jobs)
    lines = [f"{'policy':<13} {'model':<9} {'lambda':>7} {'metric':<13} "
             f"{'analytic':>12} {'sim':>12} {'ci_low':>12} {'ci_high':>12} "
             f"verdict"]
    failures = 0
    for name, point, ares, srows in pairs:
        for metric, a, v, lo, hi, verdict in _verdicts(name, point, ares,
                                                       srows):
            if verdict == "FAIL":
                failures += 1
            lines.append(
                f"{name:<13} {cfg.cost_model:<9} {point['lambda']:>7.3f} "
                f"{metric:<13} {a:>12.6f} {v:>12.6f} {lo:>12.6f} "
                f"{hi:>12.6f} {verdict}")
    lines.append(f"failures: {failures}")
    report = "\n".join(lines) + "\n"
    out = _resolve_out(args, cfg)
    if out:
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(report)
    else:
        sys.stdout.write(report)
    return 2 if failures else 0


# ----- plotdata -------------------------------------------------------------

_AXIS_CANDIDATES = ("lambda", "c2", "T", "L")


def _detect_axis(rows):
    varying = [c for c in _AXIS_CANDIDATES
               if len({r[c] for r in rows}) > 1]
    if not varying:
        return "lambda"
    if varying == ["lambda"] or varying == ["c2"]:
        return varying[0]
    if set(varying) == {"T", "L"}:
        if all(r["T"] == r["L"] for r in rows):
            return "threshold"
        raise ConfigError("T and L both vary but differ row-wise; "
                          "cannot pick a sweep axis")
    if len(varying) == 1:
        return varying[0]
    raise ConfigError(
        f"multiple sweep axes vary ({', '.join(varying)}); "
        "cannot pick one for plotting")


def cmd_plotdata(args):
    try:
        with open(args.csv, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            raw = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read '{args.csv}': {exc}") from exc
    if header is None and not raw:
        return 0  # empty file: nothing to emit
    needed = ["policy", "source", "metric", "value", "ci_low", "ci_high",
              *_AXIS_CANDIDATES]
    for col in needed:
        if col not in header:
            raise ConfigError(f"input CSV is missing column '{col}'")
    rows = []
    for r in raw:
        if r["metric"] != "total_cost":
            continue
        for c in (*_AXIS_CANDIDATES, "value", "ci_low", "ci_high"):
            try:
                r[c] = float(r[c])
            except ValueError as exc:
                raise ConfigError(
                    f"non-numeric entry in column '{c}': {r[c]!r}") from exc
        rows.append(r)
    if not rows:
        return 0
    axis = _detect_axis(rows)
    axis_col = "T" if axis == "threshold" else axis
    out_dir = args.out or "plotdata"
    os.makedirs(out_dir, exist_ok=True)
    groups = {}
    for r in rows:
        groups.setdefault((r["source"], r["policy"]), []).append(r)
    for (source, policy), grp in sorted(groups.items()):
        path = os.path.join(out_dir, f"{source}_{policy}.csv")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([axis, "total_cost", "ci_low", "ci_high"])
        for r in grp:
            writer.writerow([_fmt(r[axis_col]), _fmt(r["value"]),
                             _fmt(r["ci_low"]), _fmt(r["ci_high"])])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    return 0


# ----- CLI ------------------------------------------------------------------


class _ArgParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub, config=True):
    if config:
        sub.add_argument("--config", required=True,
                         help="TOML experiment file or packaged preset name")
    sub.add_argument("--seed", type=int, default=None,
                     help="root seed (overrides [sim].seed)")
    sub.add_argument("--jobs", type=int, default=1,
                     help="worker processes for grid points")
    sub.add_argument("--out", default=None,
                     help="output path (default: config out, else stdout)")
    sub.add_argument("--force", action="store_true",
                     help="run unstable grid points instead of aborting")


def build_parser():
    parser = _ArgParser(
        prog="predq",
        description="Scheduling with costly predictions: simulate and solve "
                    "M/G/1 cost/response sweeps.")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_ArgParser)

    p = subs.add_parser("simulate", help="discrete-event simulation sweep")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("analytic", help="closed-form evaluation sweep")
    _add_common(p)
    p.set_defaults(func=cmd_analytic)

    p = subs.add_parser("sweep", help="simulate and solve, one combined CSV")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("validate",
                        help="check analytic values against simulation CIs")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = subs.add_parser("plotdata",
                        help="split a results CSV into per-series files")
    p.add_argument("csv", help="input CSV produced by simulate/analytic/sweep")
    p.add_argument("--out", default=None,
                   help="output directory (default: ./plotdata)")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except _Abort as exc:
        print(exc.message, file=sys.stderr)
        return exc.code
    except an.NonConvergenceError as exc:
        print(f"quadrature did not converge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
