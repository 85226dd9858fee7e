"""Benchmark problems and method comparisons.

Two problem families are provided: the frictionless block move with an
absolute-work objective, and the wind turbine under a chosen wind scenario.
Each can be solved with LD-derivative gradients, with a smoothed surrogate
model, or with central finite differences of the nonsmooth objective.
Whatever the method, reported objectives always come from the one nonsmooth
evaluator so the numbers are comparable.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ldcore as ld
from . import wtps
from .daesim import IntegratorConfig, SemiExplicitDae
from .exceptions import ConfigError, ModelError
from .ldcore import LDError
from .nlp import NlpResult, NlpSpec, minimize
from .ocp import OcpProblem, ShootingResult, TerminalConstraint, evaluate, fd_gradient

__all__ = [
    "Method",
    "parse_method",
    "MethodResult",
    "ComparisonReport",
    "SolverOptions",
    "block_move_dae",
    "block_move_problem",
    "run_block_move",
    "run_block_comparison",
    "WtpsScenario",
    "wtps_problem",
    "run_wtps_method",
    "run_wtps_comparison",
    "abs_smoothing_error",
    "omega_smoothing_error",
    "time_l2",
]

NAIVE_FD_STEP = 1e-6


# ------------------------------------------------------------------- methods


@dataclass(frozen=True)
class Method:
    """Gradient source: ``ld``, ``smoothed`` (with its parameter) or ``naive_fd``."""

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("ld", "smoothed", "naive_fd"):
            raise ConfigError(f"unknown method {self.kind!r}")
        if self.kind == "smoothed":
            if self.param is None or not self.param > 0:
                raise ConfigError("smoothed method needs a positive parameter")
        elif self.param is not None:
            raise ConfigError(f"method {self.kind!r} takes no parameter")

    @property
    def label(self) -> str:
        if self.kind == "smoothed":
            return f"smoothed({self.param:g})"
        return self.kind


_METHOD_RE = re.compile(r"^\s*(ld|naive_fd|smoothed)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def parse_method(text) -> Method:
    """Parse ``"ld"``, ``"naive_fd"`` or ``"smoothed(<param>)"``."""
    if isinstance(text, Method):
        return text
    m = _METHOD_RE.match(str(text))
    if not m:
        raise ConfigError(f"unknown method {text!r}")
    kind, arg = m.group(1), m.group(2)
    if arg is None or arg == "":
        return Method(kind)
    try:
        return Method(kind, float(arg))
    except ValueError:
        raise ConfigError(f"bad method parameter in {text!r}") from None


@dataclass(frozen=True)
class SolverOptions:
    """NLP settings shared by the benchmark runs."""

    grad_tol: float = 1e-6
    step_tol: float = 1e-10
    constraint_tol: float = 1e-6
    max_iter: int = 500
    stagnation_tol: float = 1e-12
    inner_max_iter: int = 50

    def spec(self, **kw) -> NlpSpec:
        return NlpSpec(grad_tol=self.grad_tol, step_tol=self.step_tol, constraint_tol=self.constraint_tol,
                       max_iter=self.max_iter, stagnation_tol=self.stagnation_tol,
                       inner_max_iter=self.inner_max_iter, **kw)


# ------------------------------------------------------------------- results


@dataclass(frozen=True)
class MethodResult:
    """Outcome of one method on one problem.

    ``phi`` is the nonsmooth objective at the returned controls;
    ``phi_surrogate`` the value the method itself optimized (equal to
    ``phi`` except for smoothed runs).
    """

    method: str
    status: str
    iterations: int
    n_evals: int
    phi: float
    phi_surrogate: float
    constraint_violation: float
    grad_norm: float
    p_star: np.ndarray
    samples: dict = field(default_factory=dict, repr=False)
    smoothing_error: float | None = None
    branch_switches: int = 0
    message: str = ""
    history: tuple = field(default=(), repr=False)

    def summary(self) -> dict:
        out = {
            "method": self.method,
            "status": self.status,
            "iterations": self.iterations,
            "n_evals": self.n_evals,
            "phi": self.phi,
            "phi_surrogate": self.phi_surrogate,
            "constraint_violation": self.constraint_violation,
            "grad_norm": self.grad_norm,
            "branch_switches": self.branch_switches,
            "message": self.message,
            "p_star": [float(v) for v in self.p_star],
        }
        if self.smoothing_error is not None:
            out["smoothing_error"] = self.smoothing_error
        return out


@dataclass(frozen=True)
class ComparisonReport:
    problem: str
    entries: tuple[MethodResult, ...]
    error_table: tuple[tuple[float, float], ...] = ()
    error_table_name: str = ""

    def entry(self, label: str) -> MethodResult:
        for e in self.entries:
            if e.method == label:
                return e
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "methods": [e.summary() for e in self.entries],
            "error_table": {
                "parameter": self.error_table_name,
                "rows": [{"value": v, "l2_error": err} for v, err in self.error_table],
            },
        }

    def write(self, out_dir) -> list[Path]:
        """Write ``report.json``, one trajectory CSV per method and the error table."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        path = out / "report.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
        for e in self.entries:
            if not e.samples:
                continue
            path = out / f"trajectory_{_slug(e.method)}.csv"
            _write_columns(path, e.samples)
            written.append(path)
        if self.error_table:
            path = out / "error_table.csv"
            _write_columns(path, {self.error_table_name: [v for v, _ in self.error_table],
                                  "l2_error": [err for _, err in self.error_table]})
            written.append(path)
        return written


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _write_columns(path, columns: dict) -> None:
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for k in range(n):
            w.writerow([repr(float(columns[c][k])) for c in names])


def time_l2(t, values) -> float:
    """Trapezoidal ``sqrt(int values(t)^2 dt)`` over sampled points."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 2:
        return 0.0
    sq = v * v
    return math.sqrt(float(np.sum(0.5 * np.diff(t) * (sq[1:] + sq[:-1]))))


def _solve(problem: OcpProblem, method: Method, options: SolverOptions, p0, log_path=None) -> NlpResult:
    sign = -1.0 if problem.sense == "max" else 1.0
    n_c = len(problem.terminal_constraints)

    def fun(p):
        res = evaluate(problem, p)
        if method.kind == "naive_fd":
            grad = fd_gradient(problem, p, NAIVE_FD_STEP)
            jac = _fd_terminal_jacobian(problem, p) if n_c else res.terminal_jacobian
        else:
            grad, jac = res.mu, res.terminal_jacobian
        if n_c:
            return sign * res.phi, sign * grad, res.terminal_values, jac
        return sign * res.phi, sign * grad

    spec = options.spec(n_p=problem.n_p, fun=fun, lower=problem.lower_p, upper=problem.upper_p,
                        targets=problem.constraint_targets if n_c else None, log_path=log_path)
    return minimize(spec, p0)


def _fd_terminal_jacobian(problem: OcpProblem, p) -> np.ndarray:
    idx = [c.index for c in problem.terminal_constraints]
    J = np.empty((len(idx), p.size))
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = NAIVE_FD_STEP
        xp = evaluate(problem, p + e, check_bounds=False).terminal_values
        xm = evaluate(problem, p - e, check_bounds=False).terminal_values
        J[:, j] = (xp - xm) / (2 * NAIVE_FD_STEP)
    return J


# ---------------------------------------------------------------- block move


def block_move_dae(alpha: float | None = None) -> SemiExplicitDae:
    """``x1' = x2``, ``x2' = u``, ``x3' = |u x2|`` (or ``z tanh(z/alpha)``)."""
    if alpha is not None and not alpha > 0:
        raise ConfigError("alpha must be positive")

    def h(t, u, x, y):
        z = u[0] * x[1]
        work = ld.ld_abs(z) if alpha is None else z * ld.tanh(z / alpha)
        return [x[1], u[0], work]

    def g(t, x, y):
        return []

    return SemiExplicitDae(3, 0, h, g, n_u=1, state_names=("x1", "x2", "x3"), alg_names=())


def block_move_problem(n_s: int = 100, alpha: float | None = None, step_count: int = 1,
                       bounds: tuple[float, float] | None = None) -> OcpProblem:
    """Move the block from rest at 0 to rest at 1 on ``[0, 1]``.

    With a piecewise-constant force the velocity is piecewise linear, so one
    trapezoidal step per subinterval already integrates position exactly and
    the work exactly wherever the velocity keeps its sign.
    """
    if n_s < 2:
        raise ConfigError("block move needs n_s >= 2")
    lo, hi = bounds if bounds is not None else (None, None)
    return OcpProblem(
        dae=block_move_dae(alpha), x0=np.zeros(3), y_guess=np.zeros(0), t0=0.0, tf=1.0, n_s=n_s,
        lower=None if lo is None else [lo], upper=None if hi is None else [hi],
        terminal_constraints=(TerminalConstraint(0, 1.0), TerminalConstraint(1, 0.0)),
        sense="min", integrator=IntegratorConfig(step_count=step_count, store_sensitivities="final"),
    )


def abs_smoothing_error(z, alpha: float) -> np.ndarray:
    """Pointwise ``|z| - z tanh(z/alpha)`` (non-negative)."""
    z = np.asarray(z, dtype=float)
    return np.abs(z) * (1.0 - np.tanh(np.abs(z) / alpha))


def _block_samples(res: ShootingResult) -> dict:
    tr = res.trajectory
    return {"t": tr.t, "x1": tr.x[:, 0], "x2": tr.x[:, 1], "x3": tr.x[:, 2], "u": tr.u[:, 0]}


def run_block_move(method, n_s: int = 100, options: SolverOptions | None = None, step_count: int = 1,
                   p0=None, log_path=None) -> MethodResult:
    """Solve the block move with one method; failures end up in the result."""
    method = parse_method(method)
    options = options or SolverOptions()
    alpha = method.param if method.kind == "smoothed" else None
    exact = block_move_problem(n_s, None, step_count)
    work = block_move_problem(n_s, alpha, step_count)
    p0 = np.zeros(n_s) if p0 is None else np.asarray(p0, dtype=float)
    sol = _solve(work, method, options, p0, log_path)
    final = evaluate(exact, sol.p_star)
    surrogate = evaluate(work, sol.p_star).phi if alpha is not None else final.phi
    tr = final.trajectory
    err = None
    if alpha is not None:
        err = time_l2(tr.t, abs_smoothing_error(tr.u[:, 0] * tr.x[:, 1], alpha))
    return MethodResult(
        method=method.label, status=sol.status, iterations=sol.iterations, n_evals=sol.n_evals,
        phi=final.phi, phi_surrogate=surrogate,
        constraint_violation=float(np.max(np.abs(final.terminal_values - exact.constraint_targets))),
        grad_norm=sol.grad_norm_final, p_star=sol.p_star, samples=_block_samples(final),
        smoothing_error=err, branch_switches=final.n_switches, message=sol.message, history=sol.history,
    )


def run_block_comparison(n_s: int = 100, methods: Sequence = ("ld", "smoothed(1)", "smoothed(5)"),
                         options: SolverOptions | None = None, step_count: int = 1) -> ComparisonReport:
    """Run several methods on the block move.

    The error table lists, for every smoothed run, the time-L2 norm of the
    difference between the smoothed and the exact work rate along that run's
    own optimal trajectory.
    """
    entries = tuple(run_block_move(m, n_s, options, step_count) for m in methods)
    table = tuple((parse_method(e.method).param, e.smoothing_error) for e in entries
                  if e.smoothing_error is not None)
    return ComparisonReport("block", entries, table, "alpha")


# ---------------------------------------------------------------------- wtps


@dataclass(frozen=True)
class WtpsScenario:
    """A wind case for the turbine, with horizon, grid and solver settings.

    ``theta0`` is the constant initial pitch; ``None`` selects the
    steady-state optimal pitch at the initial wind speed. ``guess`` picks the
    optimizer's starting controls: ``"steady"`` holds that pitch on every
    interval, ``"schedule"`` uses the steady-state optimal pitch for the wind
    at each interval's midpoint.
    """

    profile: wtps.WindProfile
    t0: float = 18.0
    tf: float = 22.0
    n_s: int = 20
    params: wtps.WtpsParams = wtps.WtpsParams()
    pitch_bounds: tuple[float, float] = (0.0, 30.0)
    step_count: int = 20
    theta0: float | None = None
    name: str = "wtps"
    guess: str = "steady"

    def __post_init__(self):
        if self.guess not in ("steady", "schedule"):
            raise ConfigError(f"unknown initial guess {self.guess!r}; expected 'steady' or 'schedule'")

    def initial_wind(self) -> float:
        return float(self.profile(self.t0))

    def initial_pitch(self) -> float:
        if self.theta0 is not None:
            return float(self.theta0)
        return wtps.optimal_steady_pitch(self.initial_wind(), self.params, bounds=self.pitch_bounds)

    def initial_controls(self) -> np.ndarray:
        if self.guess == "steady":
            return np.full(self.n_s, self.initial_pitch())
        h = (self.tf - self.t0) / self.n_s
        mids = self.t0 + (np.arange(self.n_s) + 0.5) * h
        return np.array([wtps.optimal_steady_pitch(float(self.profile(t)), self.params, bounds=self.pitch_bounds)
                         for t in mids])


def wtps_problem(scenario: WtpsScenario, smoothing: float | None = None, theta_init: float | None = None,
                 store: str = "final") -> OcpProblem:
    """Maximize the accumulated objective from the steady state at ``t0``."""
    th = scenario.initial_pitch() if theta_init is None else theta_init
    x0, y0 = wtps.steady_state(scenario.initial_wind(), th, scenario.params)
    model = wtps.WtpsModel(scenario.profile, scenario.params, smoothing=smoothing)
    lo, hi = scenario.pitch_bounds
    return OcpProblem(
        dae=model.dae(), x0=x0, y_guess=y0, t0=scenario.t0, tf=scenario.tf, n_s=scenario.n_s,
        lower=[lo], upper=[hi], sense="max",
        integrator=IntegratorConfig(step_count=scenario.step_count, store_sensitivities=store),
    )


def wtps_samples(scenario: WtpsScenario, res: ShootingResult) -> dict:
    """Trajectory columns: time, all states, ``V``, pitch, ``P_mech``, ``omega``."""
    tr = res.trajectory
    model = wtps.WtpsModel(scenario.profile, scenario.params)
    cols = {"t": tr.t}
    for j, name in enumerate(wtps.STATE_NAMES):
        cols[name] = tr.x[:, j]
    cols["V"] = tr.y[:, 0]
    cols["u"] = tr.u[:, 0]
    pm, om, vw = [], [], []
    for k in range(len(tr.t)):
        out = model.outputs(tr.t[k], tr.u[k, 0], tr.x[k], tr.y[k])
        pm.append(out["P_mech"])
        om.append(out["omega"])
        vw.append(out["v_wind"])
    cols["P_mech"] = np.array(pm)
    cols["omega"] = np.array(om)
    cols["v_wind"] = np.array(vw)
    return cols


def omega_smoothing_error(t, p_mech, n: float, p_stl: float = 1.0) -> float:
    """Time-L2 norm of ``omega_smoothed(P, n) - omega(P)`` along a sampled path."""
    diff = [wtps.omega_smoothed(p, n, p_stl) - wtps.omega(p, p_stl) for p in np.asarray(p_mech, dtype=float)]
    return time_l2(t, diff)


def run_wtps_method(scenario: WtpsScenario, method, options: SolverOptions | None = None,
                    p0=None, log_path=None) -> MethodResult:
    """Optimize the pitch with one method; model failures are recorded, not raised."""
    method = parse_method(method)
    options = options or SolverOptions()
    smoothing = method.param if method.kind == "smoothed" else None
    th = scenario.initial_pitch()
    exact = wtps_problem(scenario, None, th)
    work = exact if smoothing is None else wtps_problem(scenario, smoothing, th)
    p0 = scenario.initial_controls() if p0 is None else np.asarray(p0, dtype=float)
    try:
        sol = _solve(work, method, options, p0, log_path)
        final = evaluate(exact, sol.p_star)
    except (ModelError, LDError) as exc:
        return MethodResult(method.label, "evaluation_error", 0, 0, float("nan"), float("nan"), 0.0,
                            float("nan"), p0, message=str(exc))
    surrogate = evaluate(work, sol.p_star).phi if smoothing is not None else final.phi
    samples = wtps_samples(scenario, final)
    err = None
    if smoothing is not None:
        err = omega_smoothing_error(samples["t"], samples["P_mech"], smoothing, scenario.params.P_stl)
    return MethodResult(
        method=method.label, status=sol.status, iterations=sol.iterations, n_evals=sol.n_evals,
        phi=final.phi, phi_surrogate=surrogate, constraint_violation=0.0, grad_norm=sol.grad_norm_final,
        p_star=sol.p_star, samples=samples, smoothing_error=err, branch_switches=final.n_switches,
        message=sol.message, history=sol.history,
    )


def run_wtps_comparison(scenario: WtpsScenario,
                        methods: Sequence = ("ld", "smoothed(10)", "smoothed(100)", "smoothed(1000)"),
                        options: SolverOptions | None = None,
                        sweep: Sequence[float] = (10.0, 100.0, 1000.0)) -> ComparisonReport:
    """Run each method on the same scenario.

    The error table is the smoothing sweep on a fixed input: the time-L2
    distance between the smoothed and the exact integrand along the first
    successful method's solution (the LD one when it is listed first).
    """
    entries = tuple(run_wtps_method(scenario, m, options) for m in methods)
    ref = next((e for e in entries if e.samples), None)
    table = ()
    if ref is not None:
        table = tuple((float(n), omega_smoothing_error(ref.samples["t"], ref.samples["P_mech"], n,
                                                       scenario.params.P_stl)) for n in sweep)
    return ComparisonReport(scenario.name, entries, table, "N")
