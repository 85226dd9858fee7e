"""Command-line front end: ``solve``, ``compare`` and ``check`` on YAML scenarios.

Exit codes
----------
0  success (solve converged, all checks passed)
1  ``check`` ran but at least one check failed
2  configuration or schema error
3  data error (e.g. malformed wind table)
4  solver failure (optimizer did not converge)
5  model error (initialization, integration, regularity, domain)
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np
import yaml

from . import bench, wtps
from .exceptions import ConfigError, DataError, ModelError
from .ldcore import LDError
from .ocp import classical_recovery_check, evaluate, quadrature_objective

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4
EXIT_MODEL = 5

TRAJECTORY_COLUMNS = ("t", *wtps.STATE_NAMES, "V", "u", "P_mech", "omega")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "name": {"type": "string"},
        "problem": {"enum": ["wtps", "block"]},
        "method": {"type": "string"},
        "horizon": {
            "type": "object", "additionalProperties": False, "required": ["t0", "tf"],
            "properties": {"t0": _NUM, "tf": _NUM},
        },
        "n_s": _POS_INT,
        "wind": {
            "type": "object",
            "required": ["kind"],
            "oneOf": [
                {"additionalProperties": False, "required": ["kind", "v0", "v_f", "t_on", "t_off"],
                 "properties": {"kind": {"const": "ramp"}, "v0": _POS, "v_f": _POS, "t_on": _NUM, "t_off": _NUM}},
                {"additionalProperties": False, "required": ["kind", "v0", "m", "t_on", "t_off"],
                 "properties": {"kind": {"const": "ramp"}, "v0": _POS, "m": _NUM, "t_on": _NUM, "t_off": _NUM}},
                {"additionalProperties": False, "required": ["kind", "v0", "mu", "sigma"],
                 "properties": {"kind": {"const": "gaussian"}, "v0": _POS, "mu": _NUM, "sigma": _POS}},
                {"additionalProperties": False, "required": ["kind", "path"],
                 "properties": {"kind": {"const": "data"}, "path": {"type": "string"}}},
            ],
        },
        "params": {
            "type": "object", "additionalProperties": False,
            "properties": {f: _NUM for f in wtps.WtpsParams.__dataclass_fields__},
        },
        "pitch": {
            "type": "object", "additionalProperties": False,
            "properties": {"lower": _NUM, "upper": _NUM, "initial": _NUM,
                           "guess": {"enum": ["steady", "schedule"]}},
        },
        "integrator": {
            "type": "object", "additionalProperties": False,
            "properties": {"step_count": _POS_INT},
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {"grad_tol": _POS, "step_tol": _POS, "constraint_tol": _POS, "max_iter": _POS_INT,
                           "stagnation_tol": _POS, "inner_max_iter": _POS_INT},
        },
        "compare": {
            "type": "object", "additionalProperties": False,
            "properties": {"methods": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                           "sweep": {"type": "array", "items": _POS, "minItems": 1}},
        },
        "check": {
            "type": "object", "additionalProperties": False,
            "properties": {"gradient_tol": _POS, "fd_step": _POS},
        },
    },
}


# -------------------------------------------------------------------- config


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [k for k in key.strip().split(".") if k]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return path, value


def apply_overrides(cfg: dict, overrides: Sequence[str]) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides:
        path, value = parse_override(text)
        node = cfg
        for k in path[:-1]:
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {text!r}: {k!r} is not a section")
            node = nxt
        node[path[-1]] = value
    return cfg


def validate_config(cfg) -> dict:
    """Schema validation plus the cross-field rules a schema cannot express."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    hz = cfg.get("horizon")
    if hz and hz["tf"] < hz["t0"]:
        raise ConfigError(f"horizon: tf ({hz['tf']}) precedes t0 ({hz['t0']})")
    for m in [cfg.get("method", "ld"), *cfg.get("compare", {}).get("methods", [])]:
        bench.parse_method(m)
    pitch = cfg.get("pitch", {})
    if "lower" in pitch and "upper" in pitch and pitch["lower"] > pitch["upper"]:
        raise ConfigError("pitch: lower exceeds upper")
    if cfg["problem"] == "wtps" and "wind" not in cfg:
        raise ConfigError("wtps problems need a wind section")
    if cfg["problem"] == "block":
        extra = sorted(set(cfg) & {"wind", "params", "pitch"})
        if extra:
            raise ConfigError(f"block problems take no {', '.join(extra)} section")
        if hz and (hz["t0"], hz["tf"]) != (0, 1):
            raise ConfigError("block problems use the fixed horizon [0, 1]")
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return validate_config(apply_overrides(cfg or {}, overrides))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def solver_options(cfg: dict) -> bench.SolverOptions:
    return bench.SolverOptions(**cfg.get("solver", {}))


def build_scenario(cfg: dict, base_dir: Path) -> bench.WtpsScenario:
    hz = cfg.get("horizon", {"t0": 18.0, "tf": 22.0})
    params = wtps.WtpsParams().with_overrides(cfg.get("params", {}))
    pitch = cfg.get("pitch", {})
    profile = wtps.make_wind(cfg["wind"], base_dir)
    if isinstance(profile, wtps.SampledWind):
        lo, hi = profile.span
        if hz["t0"] < lo or hz["tf"] > hi:
            raise DataError(f"wind table span [{lo}, {hi}] does not cover the horizon [{hz['t0']}, {hz['tf']}]")
    return bench.WtpsScenario(
        profile=profile, t0=float(hz["t0"]), tf=float(hz["tf"]), n_s=int(cfg.get("n_s", 20)), params=params,
        pitch_bounds=(float(pitch.get("lower", 0.0)), float(pitch.get("upper", 30.0))),
        step_count=int(cfg.get("integrator", {}).get("step_count", 10)),
        theta0=pitch.get("initial"), name=cfg.get("name", "wtps"), guess=pitch.get("guess", "steady"),
    )


# ----------------------------------------------------------------- artifacts


def _write_csv(path: Path, columns: dict, names: Sequence[str]) -> None:
    n = len(columns[names[0]])
    lines = [",".join(names)]
    for k in range(n):
        lines.append(",".join(repr(float(columns[c][k])) for c in names))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _summary(cfg: dict, result: bench.MethodResult) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "problem": cfg["problem"],
        "method": result.method,
        "status": result.status,
        "phi": result.phi,
        "phi_surrogate": result.phi_surrogate,
        "iterations": result.iterations,
        "n_evals": result.n_evals,
        "grad_norm": result.grad_norm,
        "constraint_violation": result.constraint_violation,
        "branch_switches": result.branch_switches,
        "message": result.message,
        "p_star": [float(v) for v in result.p_star],
    }


def _write_iterations(path: Path, history) -> None:
    cols = {
        "iter": [h.iter for h in history], "phi": [h.phi for h in history], "merit": [h.merit for h in history],
        "step": [h.step for h in history], "grad_norm": [h.grad_norm for h in history],
        "constraint_violation": [h.constraint_violation for h in history],
    }
    lines = ["iter,phi,merit,step,grad_norm,constraint_violation"]
    for k in range(len(history)):
        lines.append(",".join([str(cols["iter"][k])] + [repr(float(cols[c][k])) for c in list(cols)[1:]]))
    path.write_text("\n".join(lines) + "\n")


def write_solve_artifacts(out: Path, cfg: dict, result: bench.MethodResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    s = result.samples
    if cfg["problem"] == "wtps":
        _write_csv(out / "trajectory.csv", s, TRAJECTORY_COLUMNS)
        _write_csv(out / "plot_wind_pitch_power.csv", s, ("t", "v_wind", "u", "P_mech", "omega"))
    else:
        _write_csv(out / "trajectory.csv", s, ("t", "x1", "x2", "x3", "u"))
        _write_csv(out / "plot_block_states.csv", s, ("t", "x1", "x2", "u"))
    _write_iterations(out / "iterations.csv", result.history)
    _write_json(out / "summary.json", _summary(cfg, result))


# ------------------------------------------------------------------ commands


def _method(cfg) -> str:
    return cfg.get("method", "ld")


def cmd_solve(cfg: dict, base_dir: Path, out: Path) -> int:
    opts = solver_options(cfg)
    if cfg["problem"] == "block":
        result = bench.run_block_move(_method(cfg), int(cfg.get("n_s", 100)), opts,
                                      int(cfg.get("integrator", {}).get("step_count", 1)))
    else:
        scenario = build_scenario(cfg, base_dir)
        result = bench.run_wtps_method(scenario, _method(cfg), opts)
        if result.status == "evaluation_error":
            raise ModelError(result.message)
    write_solve_artifacts(out, cfg, result)
    print(f"{result.method}: status={result.status} phi={result.phi:.10g} iterations={result.iterations}")
    return EXIT_OK if result.status == "converged" else EXIT_SOLVER


def cmd_compare(cfg: dict, base_dir: Path, out: Path) -> int:
    opts = solver_options(cfg)
    cmp = cfg.get("compare", {})
    if cfg["problem"] == "block":
        methods = cmp.get("methods", ["ld", "smoothed(1)", "smoothed(5)"])
        report = bench.run_block_comparison(int(cfg.get("n_s", 100)), methods, opts,
                                            int(cfg.get("integrator", {}).get("step_count", 1)))
    else:
        methods = cmp.get("methods", ["ld", "smoothed(10)", "smoothed(100)", "smoothed(1000)"])
        sweep = cmp.get("sweep", [10, 100, 1000])
        report = bench.run_wtps_comparison(build_scenario(cfg, base_dir), methods, opts, sweep)
    data = report.to_dict()
    data["config_hash"] = config_hash(cfg)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out)
    _write_json(out / "report.json", data)
    for e in report.entries:
        print(f"{e.method}: status={e.status} phi={e.phi:.10g} iterations={e.iterations}")
    for v, err in report.error_table:
        print(f"{report.error_table_name}={v:g}: l2_error={err:.6g}")
    failed = [e for e in report.entries if e.status == "evaluation_error"]
    return EXIT_MODEL if failed else EXIT_OK


def _check_rows(cfg: dict, base_dir: Path) -> list[tuple[str, bool, str]]:
    chk = cfg.get("check", {})
    tol = float(chk.get("gradient_tol", 1e-4))
    step = float(chk.get("fd_step", 1e-6))
    if cfg["problem"] == "block":
        problem = bench.block_move_problem(int(cfg.get("n_s", 100)),
                                           step_count=int(cfg.get("integrator", {}).get("step_count", 1)))
        # accelerate then brake gently: the velocity stays positive on (0, 1], away from the kink
        p0 = np.where(np.arange(problem.n_p) < problem.n_p // 2, 4.0, -1.0)
    else:
        scenario = build_scenario(cfg, base_dir)
        problem = bench.wtps_problem(scenario, store="all")
        p0 = scenario.initial_controls()
    rows = []
    rep = classical_recovery_check(problem, p0, step)
    rows.append(("gradient_vs_fd", rep.max_rel_err <= tol, f"max_rel_err={rep.max_rel_err:.3e} (tol {tol:g})"))
    full = replace(problem, integrator=replace(problem.integrator, store_sensitivities="all"))
    r1 = evaluate(full, p0)
    quad = quadrature_objective(full, r1)
    rel = abs(quad - r1.phi) / max(1.0, abs(r1.phi))
    rows.append(("mayer_bookkeeping", rel <= 1e-8, f"rel_diff={rel:.3e}"))
    r2 = evaluate(full, p0)
    same = r1.phi == r2.phi and np.array_equal(r1.mu, r2.mu)
    rows.append(("determinism", same, "repeat evaluation identical" if same else "repeat evaluation differs"))
    tr = r1.trajectory
    ok = True
    if tr.X is not None and problem.tf > problem.t0:
        n_u = problem.dae.n_u
        for i in range(problem.n_s):
            tau = problem.grid(p0).breakpoint(i)
            before = tr.t <= tau
            cols = tr.X[before][:, :, i * n_u:(i + 1) * n_u]
            if np.any(cols != 0.0):
                ok = False
                break
    rows.append(("sensitivity_locality", ok, "columns vanish before their subinterval" if ok else "nonzero early"))
    inb = bool(np.all(p0 >= problem.lower_p) and np.all(p0 <= problem.upper_p))
    rows.append(("initial_guess_in_bounds", inb, ""))
    return rows


def cmd_check(cfg: dict, base_dir: Path, out: Path | None = None) -> int:
    rows = _check_rows(cfg, base_dir)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name.ljust(width)}  {'PASS' if ok else 'FAIL'}  {detail}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "check.json", {"config_hash": config_hash(cfg),
                                         "checks": [{"name": n, "pass": bool(ok), "detail": d} for n, ok, d in rows]})
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_CHECK_FAILED


COMMANDS = {"solve": cmd_solve, "compare": cmd_compare, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldwind", description="Nonsmooth pitch-control optimization toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scenario YAML file")
    common.add_argument("--out", default=None, help="output directory (default: ./out/<config stem>)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, dotted keys for nesting (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="optimize the configured scenario")
    sub.add_parser("compare", parents=[common], help="run the method comparison")
    sub.add_parser("check", parents=[common], help="gradient oracle and invariant checks")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    out = Path(args.out) if args.out else Path("out") / Path(args.config).stem
    try:
        cfg = load_config(args.config, args.override)
        code = COMMANDS[args.command](cfg, Path(args.config).resolve().parent, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, LDError, ZeroDivisionError, FloatingPointError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    if args.command != "check" or args.out:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "timing.json", {"command": args.command,
                                          "wall_time_s": round(time.perf_counter() - started, 3)})
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
