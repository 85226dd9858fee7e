"""Direct single shooting with LD-derivative sensitivities.

A problem couples a semi-explicit DAE, whose last differential state
accumulates the running objective, with a piecewise-constant control grid.
:func:`evaluate` integrates the state together with its sensitivities and
returns the Mayer objective ``phi = x_aux(tf)``, an element ``mu`` of its
generalized gradient (the accumulator row of ``X(tf)``) and the terminal
constraint values with their Jacobian rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controls import ControlGrid, control_at
from .daesim import (
    AugmentedDaeState,
    IntegratorConfig,
    SemiExplicitDae,
    TrajectoryRecord,
    consistent_init,
    integrate,
)
from .exceptions import ModelError
from .ldcore import LDError

__all__ = [
    "ControlGrid",
    "control_at",
    "TerminalConstraint",
    "OcpProblem",
    "ShootingResult",
    "evaluate",
    "fd_gradient",
    "classical_recovery_check",
    "RecoveryReport",
    "quadrature_objective",
]


@dataclass(frozen=True)
class TerminalConstraint:
    """Equality ``x[index](tf) == target``."""

    index: int
    target: float


@dataclass(frozen=True)
class OcpProblem:
    """Single-shooting problem data.

    Parameters
    ----------
    dae : SemiExplicitDae
        Model whose differential state ``objective_index`` (default: last)
        is the Mayer accumulator.
    x0, y_guess : array_like
        Initial differential state and a guess for the algebraic state.
    t0, tf : float
        Horizon.
    n_s : int
        Number of control subintervals.
    lower, upper : array_like
        Per-control bounds of length ``n_u``; repeated over all subintervals.
    terminal_constraints : sequence of TerminalConstraint
    sense : {"min", "max"}
        Whether ``phi`` is to be minimized or maximized. Only the NLP layer
        uses this; :func:`evaluate` always reports ``phi`` itself.
    """

    dae: SemiExplicitDae
    x0: np.ndarray
    y_guess: np.ndarray
    t0: float
    tf: float
    n_s: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    terminal_constraints: tuple[TerminalConstraint, ...] = ()
    objective_index: int = -1
    sense: str = "min"
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(self.dae.n_x)
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        yg = np.array(self.y_guess, dtype=float).reshape(self.dae.n_y)
        object.__setattr__(self, "y_guess", yg)
        n_u = self.dae.n_u
        lo = np.full(n_u, -np.inf) if self.lower is None else np.array(self.lower, dtype=float).reshape(n_u)
        hi = np.full(n_u, np.inf) if self.upper is None else np.array(self.upper, dtype=float).reshape(n_u)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "terminal_constraints", tuple(
            c if isinstance(c, TerminalConstraint) else TerminalConstraint(int(c[0]), float(c[1]))
            for c in self.terminal_constraints))
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if self.n_s < 1:
            raise ValueError("n_s must be positive")
        if not self.tf >= self.t0:
            raise ValueError(f"tf ({self.tf}) precedes t0 ({self.t0})")
        aux = self.objective_index % self.dae.n_x
        if x0[aux] != 0.0:
            raise ValueError("the objective accumulator must start at zero")
        object.__setattr__(self, "objective_index", aux)

    @property
    def n_p(self) -> int:
        return self.n_s * self.dae.n_u

    @property
    def lower_p(self) -> np.ndarray:
        return np.tile(self.lower, self.n_s)

    @property
    def upper_p(self) -> np.ndarray:
        return np.tile(self.upper, self.n_s)

    @property
    def constraint_targets(self) -> np.ndarray:
        return np.array([c.target for c in self.terminal_constraints], dtype=float)

    def grid(self, p) -> ControlGrid:
        return ControlGrid.from_vector(self.t0, self.tf, self.n_s, p)

    def with_dae(self, dae: SemiExplicitDae) -> "OcpProblem":
        """Same problem data around a different model (e.g. a smoothed one)."""
        from dataclasses import replace

        return replace(self, dae=dae)


@dataclass(frozen=True)
class ShootingResult:
    phi: float
    mu: np.ndarray
    terminal_values: np.ndarray
    terminal_jacobian: np.ndarray
    trajectory: TrajectoryRecord
    branch_log: tuple = ()

    @property
    def n_switches(self) -> int:
        return max(len(self.branch_log) - 1, 0)


def evaluate(problem: OcpProblem, p, check_bounds: bool = True) -> ShootingResult:
    """Integrate at decision vector ``p`` and return objective and sensitivities.

    Raises
    ------
    ValueError
        ``p`` has the wrong size or lies outside the bounds.
    ModelError, LDError
        Propagated from initialization or integration; the offending
        decision vector is attached as ``exc.p``.
    """
    p = np.array(p, dtype=float).ravel()
    if p.shape != (problem.n_p,):
        raise ValueError(f"expected {problem.n_p} decision variables, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise ValueError("decision vector contains non-finite entries")
    if check_bounds and (np.any(p < problem.lower_p) or np.any(p > problem.upper_p)):
        raise ValueError("decision vector violates the control bounds")
    dae = problem.dae
    grid = problem.grid(p)
    try:
        y0, Y0 = consistent_init(dae, problem.t0, problem.x0, problem.y_guess, problem.integrator, n_p=problem.n_p)
        init = AugmentedDaeState(problem.t0, problem.x0.copy(), y0, np.zeros((dae.n_x, problem.n_p)), Y0)
        traj = integrate(dae, problem.integrator, grid, init)
    except (ModelError, LDError) as exc:
        exc.p = p.copy()
        raise
    aux = problem.objective_index
    idx = [c.index for c in problem.terminal_constraints]
    xf = traj.x[-1]
    return ShootingResult(
        phi=float(xf[aux]),
        mu=traj.X_final[aux].copy(),
        terminal_values=xf[idx].copy(),
        terminal_jacobian=traj.X_final[idx].copy(),
        trajectory=traj,
        branch_log=traj.branch_log,
    )


def fd_gradient(problem: OcpProblem, p, step: float = 1e-6, central: bool = True) -> np.ndarray:
    """Finite-difference gradient of ``phi`` (bounds are not enforced)."""
    p = np.array(p, dtype=float).ravel()
    base = None if central else evaluate(problem, p, check_bounds=False).phi
    grad = np.empty(p.size)
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = step
        fp = evaluate(problem, p + e, check_bounds=False).phi
        if central:
            fm = evaluate(problem, p - e, check_bounds=False).phi
            grad[j] = (fp - fm) / (2 * step)
        else:
            grad[j] = (fp - base) / step
    return grad


@dataclass(frozen=True)
class RecoveryReport:
    mu: np.ndarray
    fd: np.ndarray
    rel_err: np.ndarray
    phi: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0


def relative_errors(mu, fd) -> np.ndarray:
    """``|mu - fd| / max(|fd|, 1e-6 * max(1, |fd|_inf))`` componentwise."""
    mu = np.asarray(mu, dtype=float)
    fd = np.asarray(fd, dtype=float)
    if fd.size == 0:
        return np.zeros(0)
    floor = 1e-6 * max(1.0, float(np.max(np.abs(fd))))
    return np.abs(mu - fd) / np.maximum(np.abs(fd), floor)


def classical_recovery_check(problem: OcpProblem, p, step: float = 1e-6) -> RecoveryReport:
    """Compare ``mu`` against a central finite-difference gradient of ``phi``."""
    res = evaluate(problem, p, check_bounds=False)
    fd = fd_gradient(problem, p, step)
    return RecoveryReport(mu=res.mu, fd=fd, rel_err=relative_errors(res.mu, fd), phi=res.phi)


def quadrature_objective(problem: OcpProblem, result: ShootingResult) -> float:
    """Trapezoidal quadrature of the running integrand along the stored trajectory.

    Step ``k`` uses the control ``u[k]`` at both of its endpoints, matching
    the integrator's convention at control breakpoints.
    """
    traj = result.trajectory
    dae = problem.dae
    aux = problem.objective_index
    total = 0.0
    for k in range(1, len(traj.t)):
        u = traj.u[k]
        f0 = dae.h(traj.t[k - 1], u, traj.x[k - 1], traj.y[k - 1])[aux]
        f1 = dae.h(traj.t[k], u, traj.x[k], traj.y[k])[aux]
        total += 0.5 * (traj.t[k] - traj.t[k - 1]) * (f0 + f1)
    return total


def decision_bounds(problem: OcpProblem) -> tuple[np.ndarray, np.ndarray]:
    return problem.lower_p, problem.upper_p


def constant_guess(problem: OcpProblem, value: Sequence[float] | float) -> np.ndarray:
    """Decision vector holding every control at ``value``."""
    v = np.broadcast_to(np.asarray(value, dtype=float), (problem.dae.n_u,))
    return np.tile(v, problem.n_s)
