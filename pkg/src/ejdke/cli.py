"""Command-line entry point.

Every subcommand resolves its settings as ``defaults <- --config JSON <- flags``,
writes its artifacts into ``--out`` and finishes with ``manifest.json``. A
manifest can be fed back through ``--config`` to repeat a run.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import traceback
from importlib import metadata

import numpy as np

from . import _accel
from .adaptive import MODES, calibrate_k, candidate_bandwidths, select_bandwidth
from .estimator import EvalGrid, estimate_density, estimate_density_convolved
from .kernel import build_kernel
from .model import (
    CHECK_NAMES,
    DimensionError,
    ModelConfigError,
    QuadratureError,
    build_model,
    check_assumptions,
    default_probes,
)
from .rates import FixedRule, RateRule, SmoothnessSpec, mse_experiment, variance_probe
from .simulate import (
    SimulationError,
    TrajectoryFormatError,
    read_trajectory,
    simulate_path,
    trajectory_csv,
    write_trajectory,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DIMENSION = 4
EXIT_SIMULATION = 5
EXIT_FORMAT = 6
EXIT_NUMERIC = 7
EXIT_CHECK_FAILED = 8


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class CheckFailed(Exception):
    pass


_MODEL_DEFAULTS = {"preset": "radial-pushback-3", "model_params": {}, "model": None}

DEFAULTS = {
    "simulate": {**_MODEL_DEFAULTS, "T": 1000.0, "dt": 0.01, "burn_in": None, "seed": 0, "csv": False},
    "estimate": {"traj": None, "h": None, "eta": None, "M": 2, "box": [-2.0, 2.0], "nodes": 20, "eval_grid": None},
    "select-bandwidth": {
        "traj": None, "grid": "relaxed", "k_max": 4, "k": 2.0, "M": 5,
        "box": [-1.5, 1.5], "nodes": 10, "eval_grid": None,
    },
    "rate-experiment": {
        **_MODEL_DEFAULTS, "T_grid": [500.0, 2000.0, 8000.0], "reps": 50, "beta": None, "fixed_h": None,
        "scale": 1.0, "dt": 0.01, "M": 2, "box": [-1.5, 1.5], "nodes": 37, "eval_grid": None, "seed": 0,
        "tolerance": 0.25, "oracle_factor": 100.0, "oracle_dt": None, "burn_in": None, "dt_check": False,
    },
    "variance-probe": {
        **_MODEL_DEFAULTS, "sizes": [2.0 ** -k for k in range(3, 8)], "T": 500.0, "reps": 100, "dt": 0.002,
        "seed": 0, "tolerance": 0.3, "center": None, "burn_in": None,
    },
    "calibrate-k": {
        **_MODEL_DEFAULTS, "T": 1000.0, "dt": 0.02, "k_grid": [0.1, 0.2, 0.5, 1.0, 2.0, 4.0], "reps": 10,
        "grid": "relaxed", "k_max": 4, "M": 2, "box": [-1.5, 1.5], "nodes": 10, "eval_grid": None,
        "seed": 0, "oracle_factor": 100.0, "burn_in": None,
    },
    "validate-model": {**_MODEL_DEFAULTS, "probes": 1000, "radius": 10.0, "seed": 0, "tolerance": 1e-8},
}

POSITIVE = ("T", "dt", "reps", "nodes", "k", "k_max", "probes", "radius", "tolerance", "oracle_factor", "scale")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _model_flags(p):
    p.add_argument("--preset", help="model preset, e.g. radial-pushback-3 or smooth-1d")
    p.add_argument(
        "--model-param", dest="model_params", action="append", metavar="KEY=VALUE",
        help="override a preset parameter (repeatable), e.g. gamma0=0",
    )


def _grid_flags(p):
    p.add_argument("--box", type=float, nargs=2, metavar=("LO", "HI"), help="evaluation box, same on every axis")
    p.add_argument("--nodes", type=int, help="evaluation nodes per axis")


def build_parser():
    S = argparse.SUPPRESS
    parser = _Parser(prog="ejdke", description="Invariant-density estimation for ergodic jump diffusions")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=S)
        p.add_argument("--config", help="JSON config or a previous manifest.json")
        p.add_argument("--out", default="out", help="output directory")
        return p

    p = add("simulate", "simulate a trajectory")
    _model_flags(p)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", action="store_true", help="also write a CSV export")

    p = add("estimate", "kernel estimate on a grid")
    p.add_argument("--traj")
    p.add_argument("--h", type=float, nargs="+")
    p.add_argument("--eta", type=float, nargs="+")
    p.add_argument("--M", type=int)
    _grid_flags(p)

    p = add("select-bandwidth", "adaptive bandwidth selection")
    p.add_argument("--traj")
    p.add_argument("--grid", choices=MODES)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--M", type=int)
    _grid_flags(p)

    p = add("rate-experiment", "Monte Carlo risk-versus-T slope")
    _model_flags(p)
    p.add_argument("--T-grid", dest="T_grid", type=float, nargs="+")
    p.add_argument("--reps", type=int)
    p.add_argument("--beta", type=float, nargs="+", help="smoothness vector for the rate bandwidth")
    p.add_argument("--fixed-h", dest="fixed_h", type=float, nargs="+", help="use this h for every T")
    p.add_argument("--scale", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--M", type=int)
    _grid_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--oracle-factor", dest="oracle_factor", type=float)
    p.add_argument("--oracle-dt", dest="oracle_dt", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--dt-check", dest="dt_check", action="store_true")

    p = add("variance-probe", "variance of occupation times against support size")
    _model_flags(p)
    p.add_argument("--sizes", type=float, nargs="+")
    p.add_argument("--T", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)

    p = add("calibrate-k", "choose the penalty constant by simulation")
    _model_flags(p)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--k-grid", dest="k_grid", type=float, nargs="+")
    p.add_argument("--reps", type=int)
    p.add_argument("--grid", choices=MODES)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--M", type=int)
    _grid_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle-factor", dest="oracle_factor", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=float)

    p = add("validate-model", "numeric checks of the model assumptions")
    _model_flags(p)
    p.add_argument("--probes", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    return parser


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(path, command):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "run_config" in cfg:
        rc = cfg["run_config"]
        if rc.get("command") != command:
            raise ConfigError(f"manifest is for {rc.get('command')!r}, not {command!r}")
        cfg = rc["params"]
    unknown = set(cfg) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    return cfg


def resolve_config(command, args):
    cfg = dict(DEFAULTS[command])
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    if getattr(args, "config", None):
        cfg.update(_load_config(args.config, command))
    if "model_params" in explicit:
        params = dict(cfg.get("model_params") or {})
        for item in explicit.pop("model_params"):
            if "=" not in item:
                raise UsageError(f"--model-param expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            params[key.strip()] = _parse_value(value.strip())
        cfg["model_params"] = params
    cfg.update(explicit)
    for key in POSITIVE:
        if key in cfg and cfg[key] is not None and not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive, got {cfg[key]}")
    if "M" in cfg and cfg["M"] < 0:
        raise ConfigError("kernel order M must be nonnegative")
    if "box" in cfg and cfg["box"] is not None and not cfg["box"][0] < cfg["box"][1]:
        raise ConfigError("box needs LO < HI")
    return cfg


def _model(cfg):
    if cfg.get("model") is not None:
        return build_model(cfg["model"])
    return build_model(cfg["preset"], **(cfg.get("model_params") or {}))


def _eval_grid(cfg, d):
    if cfg.get("eval_grid") is not None:
        grid = EvalGrid.from_dict(cfg["eval_grid"])
        if grid.dim != d:
            raise DimensionError(f"evaluation grid has dimension {grid.dim}, data has {d}")
        return grid
    lo, hi = cfg["box"]
    return EvalGrid(np.full(d, lo), np.full(d, hi), (int(cfg["nodes"]),) * d)


def _vector(values, d, what):
    v = np.asarray(values, float).ravel()
    if v.size == 1:
        return np.full(d, v[0])
    if v.size != d:
        raise DimensionError(f"{what} has {v.size} entries, data has dimension {d}")
    return v


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


class Writer:
    """Single writer for every artifact of one run."""

    def __init__(self, out, command, cfg):
        self.out = out
        self.command = command
        self.run_config = {"command": command, "params": cfg}
        self.artifacts = []
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def json(self, name, payload):
        body = dict(payload)
        body["run_config"] = self.run_config
        with open(self.path(name), "w") as fh:
            json.dump(body, fh, indent=2, default=_json_default)
            fh.write("\n")
        self.artifacts.append(name)

    def csv(self, name, text):
        header = "# run_config: " + json.dumps(self.run_config, sort_keys=True, default=_json_default) + "\n"
        with open(self.path(name), "w") as fh:
            fh.write(header + text)
        self.artifacts.append(name)

    def raw(self, name):
        self.artifacts.append(name)
        return self.path(name)

    def manifest(self, started, status="ok", error=None):
        body = {
            "tool": "ejdke",
            "status": status,
            "run_config": self.run_config,
            "versions": versions(),
            "wall_time_s": time.perf_counter() - started,
            "artifacts": self.artifacts,
        }
        if error is not None:
            body["error"] = error
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(body, fh, indent=2, default=_json_default)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def versions():
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("scipy", "numba", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    out["backend"] = _accel.resolve()
    return out


def csv_body(path):
    """CSV text without ``#`` comment lines."""
    with open(path) as fh:
        return "".join(line for line in fh if not line.startswith("#"))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(cfg, w):
    model = _model(cfg)
    traj = simulate_path(model, T=cfg["T"], dt=cfg["dt"], burn_in=cfg["burn_in"], seed=cfg["seed"])
    write_trajectory(traj, w.raw("trajectory.ejdt"))
    if cfg["csv"]:
        w.csv("trajectory.csv", trajectory_csv(traj))
    w.json("trajectory.json", {"provenance": traj.provenance(), "n_steps": traj.n_steps, "model": model.to_dict()})
    return f"wrote {traj.n_steps} states of {model.label} to {w.path('trajectory.ejdt')}"


def _read_traj(cfg):
    if not cfg.get("traj"):
        raise ConfigError("--traj is required")
    return read_trajectory(cfg["traj"])


def cmd_estimate(cfg, w):
    traj = _read_traj(cfg)
    if cfg["h"] is None:
        raise ConfigError("--h is required")
    kernel = build_kernel(cfg["M"])
    grid = _eval_grid(cfg, traj.dim)
    h = _vector(cfg["h"], traj.dim, "h")
    if cfg["eta"] is not None:
        est = estimate_density_convolved(traj, kernel, h, _vector(cfg["eta"], traj.dim, "eta"), grid)
    else:
        est = estimate_density(traj, kernel, h, grid)
    w.json("estimate.json", {**est.to_dict(), "kernel": kernel.to_dict()})
    w.csv("estimate.csv", est.to_csv())
    return f"estimate on {grid.size} nodes, mass on grid {est.to_dict()['mass_on_grid']:.6g}"


def cmd_select_bandwidth(cfg, w):
    traj = _read_traj(cfg)
    kernel = build_kernel(cfg["M"])
    grid = candidate_bandwidths(traj.T, traj.dim, cfg["grid"], cfg["k_max"])
    if len(grid) == 0:
        raise ConfigError(f"the {cfg['grid']} candidate set is empty for T = {traj.T}")
    ev = _eval_grid(cfg, traj.dim)
    sel = select_bandwidth(traj, kernel, grid, ev, cfg["k"])
    w.json("selection.json", sel.to_dict())
    w.csv("selection.csv", sel.to_csv())
    return f"h~ = {sel.h_tilde.tolist()} out of {len(grid)} candidates"


def _rule(cfg, d):
    if cfg["fixed_h"] is not None:
        return FixedRule(tuple(_vector(cfg["fixed_h"], d, "fixed_h")))
    beta = cfg["beta"] if cfg["beta"] is not None else [2.0]
    return RateRule(SmoothnessSpec(tuple(_vector(beta, d, "beta"))), cfg["scale"])


def cmd_rate_experiment(cfg, w):
    model = _model(cfg)
    if len(cfg["T_grid"]) < 3:
        raise ConfigError("rate-experiment needs at least 3 values in --T-grid for a slope")
    ev = _eval_grid(cfg, model.dim)
    report = mse_experiment(
        model, _rule(cfg, model.dim), cfg["T_grid"], cfg["reps"], ev, cfg["seed"],
        dt=cfg["dt"], kernel=build_kernel(cfg["M"]), burn_in=cfg["burn_in"], tolerance=cfg["tolerance"],
        oracle_factor=cfg["oracle_factor"], oracle_dt=cfg["oracle_dt"], dt_check=cfg["dt_check"],
    )
    w.json("rate_report.json", report.to_dict())
    w.csv("rate_report.csv", report.to_csv())
    w.csv("rate_plot.csv", report.plot_csv())
    return f"slope {report.slope:.4f} (theory {report.theory:.4f}, tolerance {report.tolerance}) -> {'pass' if report.passed else 'FAIL'}"


def cmd_variance_probe(cfg, w):
    model = _model(cfg)
    rep = variance_probe(
        model, cfg["sizes"], cfg["T"], cfg["reps"], cfg["seed"], dt=cfg["dt"],
        center=cfg["center"], burn_in=cfg["burn_in"], tolerance=cfg["tolerance"],
    )
    w.json("variance_report.json", rep.to_dict())
    w.csv("variance_report.csv", rep.to_csv())
    return f"slope {rep.slope:.4f} (theory {rep.theory:.4f}) -> {'pass' if rep.passed else 'FAIL'}"


def cmd_calibrate_k(cfg, w):
    model = _model(cfg)
    ev = _eval_grid(cfg, model.dim)
    res = calibrate_k(
        model, cfg["T"], cfg["dt"], ev, cfg["k_grid"], cfg["reps"], cfg["seed"],
        kernel=build_kernel(cfg["M"]), mode=cfg["grid"], k_max=cfg["k_max"],
        oracle_factor=cfg["oracle_factor"], burn_in=cfg["burn_in"],
    )
    w.json("calibration.json", res.to_dict())
    w.csv("calibration.csv", res.to_csv())
    return f"chosen k = {res.chosen_k}" + (" (flat risk curve)" if res.flat else "")


def cmd_validate_model(cfg, w):
    model = _model(cfg)
    probes = default_probes(model.dim, cfg["probes"], cfg["radius"], cfg["seed"])
    tol = {name: cfg["tolerance"] for name in CHECK_NAMES}
    rep = check_assumptions(model, probes, tolerances=tol, seed=cfg["seed"])
    w.json("assumptions.json", rep.to_dict())
    if not rep.passed:
        raise CheckFailed(f"failed checks: {', '.join(rep.failed())}")
    return f"all {len(rep.checks)} checks pass for {model.label}"


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "select-bandwidth": cmd_select_bandwidth,
    "rate-experiment": cmd_rate_experiment,
    "variance-probe": cmd_variance_probe,
    "calibrate-k": cmd_calibrate_k,
    "validate-model": cmd_validate_model,
}


def _classify(exc):
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, DimensionError):
        return EXIT_DIMENSION
    if isinstance(exc, (ConfigError, ModelConfigError)):
        return EXIT_CONFIG
    if isinstance(exc, SimulationError):
        return EXIT_SIMULATION
    if isinstance(exc, (TrajectoryFormatError, FileNotFoundError)):
        return EXIT_FORMAT
    if isinstance(exc, QuadratureError):
        return EXIT_NUMERIC
    if isinstance(exc, CheckFailed):
        return EXIT_CHECK_FAILED
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def run_cli(argv=None):
    """Run one subcommand; returns the exit status."""
    started = time.perf_counter()
    parser = build_parser()
    writer = None
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + " | ".join(COMMANDS))
        cfg = resolve_config(args.command, args)
        writer = Writer(args.out, args.command, cfg)
        summary = COMMANDS[args.command](cfg, writer)
        writer.manifest(started)
        print(summary)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured record
        code = _classify(exc)
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if code == EXIT_INTERNAL:
            record["traceback"] = traceback.format_exc()
        if isinstance(exc, SimulationError):
            record["step"] = exc.step
        if writer is not None:
            writer.manifest(started, status="error", error=record)
        print(json.dumps(record), file=sys.stderr)
        return code


def main():
    sys.exit(run_cli())


if __name__ == "__main__":  # pragma: no cover
    main()
