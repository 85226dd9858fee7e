"""Fixed-step trapezoidal integration of semi-explicit index-1 DAEs.

The state ``(x, y)`` obeys ``x' = h(t, u, x, y)``, ``0 = g(t, x, y)``. Along
with the state the integrator carries LD-derivative sensitivities
``X = dx/dp``, ``Y = dy/dp`` with respect to piecewise-constant control
parameters. Each step solves the trapezoidal corrector with a chord Newton
iteration, then updates the sensitivities with one linear solve using the
L-derivative of ``(h, g)`` at the new point (branch selections frozen there).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ldcore as ld
from .controls import ControlGrid
from .exceptions import InitError, IntegrationError, RegularityError

__all__ = [
    "SemiExplicitDae",
    "IntegratorConfig",
    "AugmentedDaeState",
    "TrajectoryRecord",
    "consistent_init",
    "integrate",
    "step",
    "point_jacobian",
]


@dataclass(frozen=True)
class SemiExplicitDae:
    """A semi-explicit DAE whose right-hand sides accept floats or LDScalars.

    ``rhs_h(t, u, x, y)`` returns ``n_x`` entries and ``alg_g(t, x, y)``
    returns ``n_y``. When the callables are written with :mod:`ldwind.ldcore`
    elementals the same functions serve as their own LD lifts; pass
    ``ld_rhs_h``/``ld_alg_g`` only if a separate lifted version exists.
    """

    n_x: int
    n_y: int
    rhs_h: Callable
    alg_g: Callable
    n_u: int = 1
    ld_rhs_h: Callable | None = None
    ld_alg_g: Callable | None = None
    state_names: tuple[str, ...] | None = None
    alg_names: tuple[str, ...] | None = None

    @property
    def lifted_h(self) -> Callable:
        return self.ld_rhs_h or self.rhs_h

    @property
    def lifted_g(self) -> Callable:
        return self.ld_alg_g or self.alg_g

    def h(self, t, u, x, y) -> np.ndarray:
        return ld.values(self.rhs_h(t, u, x, y))

    def g(self, t, x, y) -> np.ndarray:
        if self.n_y == 0:
            return np.zeros(0)
        return ld.values(self.alg_g(t, x, y))


@dataclass(frozen=True)
class IntegratorConfig:
    step_count: int = 100
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    regularity_floor: float = 1e-8
    # "all": keep X, Y at every accepted step; "final": only at tf
    store_sensitivities: str = "all"

    def __post_init__(self):
        if self.step_count < 1 or self.newton_max_iter < 1:
            raise ValueError("step_count and newton_max_iter must be positive")
        if not (self.newton_tol > 0 and self.regularity_floor > 0):
            raise ValueError("tolerances must be positive")
        if self.store_sensitivities not in ("all", "final"):
            raise ValueError("store_sensitivities must be 'all' or 'final'")


@dataclass(frozen=True)
class AugmentedDaeState:
    t: float
    x: np.ndarray
    y: np.ndarray
    X: np.ndarray
    Y: np.ndarray


@dataclass(frozen=True)
class PointJacobian:
    """Values and L-derivative of ``(h, g)`` at one point.

    Column blocks of ``H``/``G`` are ``[x | y | u]``.
    """

    h: np.ndarray
    g: np.ndarray
    H: np.ndarray
    G: np.ndarray
    n_x: int
    n_y: int
    branches: tuple = ()

    @property
    def Hx(self):
        return self.H[:, :self.n_x]

    @property
    def Hy(self):
        return self.H[:, self.n_x:self.n_x + self.n_y]

    @property
    def Hu(self):
        return self.H[:, self.n_x + self.n_y:]

    @property
    def Gx(self):
        return self.G[:, :self.n_x]

    @property
    def Gy(self):
        return self.G[:, self.n_x:self.n_x + self.n_y]

    def hdot(self, X, Y, S):
        """Sensitivity right-hand side ``Hx X + Hy Y + Hu S``."""
        return self.Hx @ X + self.Hy @ Y + self.Hu @ S


@dataclass(frozen=True)
class TrajectoryRecord:
    """Accepted states of one integration run.

    ``u[k]`` is the control applied on the step ending at ``t[k]`` (``u[0]``
    is the first subinterval's control). ``X``/``Y`` are ``None`` when only
    final sensitivities were requested.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    X_final: np.ndarray
    Y_final: np.ndarray
    X: np.ndarray | None = None
    Y: np.ndarray | None = None
    branch_log: tuple = field(default=())

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def to_csv(self, path, state_names: Sequence[str] | None = None,
               alg_names: Sequence[str] | None = None) -> None:
        n_x, n_y = self.x.shape[1], self.y.shape[1]
        xs = list(state_names) if state_names else [f"x{i + 1}" for i in range(n_x)]
        ys = list(alg_names) if alg_names else [f"y{i + 1}" for i in range(n_y)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *xs, *ys])
            for k in range(len(self.t)):
                w.writerow([repr(float(v)) for v in (self.t[k], *self.x[k], *self.y[k])])


def point_jacobian(dae: SemiExplicitDae, t: float, u, x, y) -> PointJacobian:
    """Evaluate ``(h, g)`` in LD arithmetic with identity directions.

    The result is an L-derivative of the RHS at the point; at points where no
    nonsmooth elemental is tied it is the ordinary Jacobian of the active
    branch. Branch ids chosen during the evaluation are returned for logging.
    """
    n_x, n_y = dae.n_x, dae.n_y
    n_u = len(u)
    k = n_x + n_y + n_u
    zs = ld.variables([*x, *y, *u], k)
    xv, yv, uv = zs[:n_x], zs[n_x:n_x + n_y], zs[n_x + n_y:]
    with ld.branch_trace() as trace:
        hs = dae.lifted_h(t, uv, xv, yv)
        gs = dae.lifted_g(t, xv, yv) if n_y else []
    return PointJacobian(
        h=ld.values(hs),
        g=ld.values(gs) if n_y else np.zeros(0),
        H=ld.jacobian_rows(hs, k),
        G=ld.jacobian_rows(gs, k) if n_y else np.zeros((0, k)),
        n_x=n_x,
        n_y=n_y,
        branches=tuple(trace),
    )


def _check_regular(Gy: np.ndarray, floor: float, t: float) -> None:
    if Gy.size == 0:
        return
    smin = np.linalg.svd(Gy, compute_uv=False).min()
    if not smin >= floor:
        raise RegularityError(f"dg/dy nearly singular (sigma_min={smin:.3g})", t)


def consistent_init(dae: SemiExplicitDae, t0: float, x0, y_guess, config: IntegratorConfig | None = None,
                    n_p: int = 0, X0=None):
    """Solve ``g(t0, x0, y0) = 0`` and the linear condition for ``Y0``.

    ``X0`` defaults to zero, which forces ``Y0 = 0`` whenever dg/dy is
    nonsingular.
    """
    config = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    y = np.array(y_guess, dtype=float).reshape(dae.n_y)
    X0 = np.zeros((dae.n_x, n_p)) if X0 is None else np.asarray(X0, dtype=float)
    if dae.n_y == 0:
        return y, np.zeros((0, n_p))
    u_dummy = np.zeros(dae.n_u)
    for _ in range(config.newton_max_iter * 2):
        jac = point_jacobian(dae, t0, u_dummy, x0, y)
        _check_regular(jac.Gy, config.regularity_floor, t0)
        dy = np.linalg.solve(jac.Gy, -jac.g)
        y = y + dy
        if np.max(np.abs(dy)) <= config.newton_tol * (1.0 + np.max(np.abs(y))):
            break
    else:
        raise InitError(f"consistent initialization did not converge (|g|={np.max(np.abs(jac.g)):.3g})")
    jac = point_jacobian(dae, t0, u_dummy, x0, y)
    _check_regular(jac.Gy, config.regularity_floor, t0)
    if np.max(np.abs(jac.g)) > 10 * config.newton_tol * max(1.0, np.max(np.abs(y))):
        raise InitError(f"algebraic residual {np.max(np.abs(jac.g)):.3g} above tolerance")
    Y0 = np.linalg.solve(jac.Gy, -jac.Gx @ X0) if n_p else np.zeros((dae.n_y, 0))
    return y, Y0


def _corrector_matrix(jac: PointJacobian, half_dt: float) -> np.ndarray:
    # d/dz of the residual [x1 - x0 - dt/2 (h0 + h1); g1]
    n_x = jac.n_x
    J = np.vstack((-half_dt * jac.H[:, :n_x + jac.n_y], jac.G[:, :n_x + jac.n_y]))
    J[:n_x, :n_x] += np.eye(n_x)
    return J


def _corrector(dae, config, t1, u, x0, y0, jac0: PointJacobian, half_dt):
    """Chord Newton on the trapezoidal residual.

    The iteration matrix starts from the L-derivative at the previous point and
    is rebuilt at the current iterate whenever the contraction is poor.
    """
    n_x = dae.n_x
    h0 = jac0.h
    x1 = x0 + 2.0 * half_dt * h0
    y1 = y0.copy()
    J = _corrector_matrix(jac0, half_dt)
    prev = np.inf
    for it in range(config.newton_max_iter):
        h1 = dae.h(t1, u, x1, y1)
        g1 = dae.g(t1, x1, y1)
        F = np.concatenate((x1 - x0 - half_dt * (h0 + h1), g1))
        if not np.all(np.isfinite(F)):
            raise IntegrationError("non-finite corrector residual", t1)
        res = np.max(np.abs(F))
        if it > 0 and res > 0.25 * prev:
            J = _corrector_matrix(point_jacobian(dae, t1, u, x1, y1), half_dt)
        prev = res
        try:
            dz = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise IntegrationError(f"singular corrector Jacobian: {exc}", t1) from None
        x1 = x1 + dz[:n_x]
        y1 = y1 + dz[n_x:]
        scale = 1.0 + max(np.max(np.abs(x1)), np.max(np.abs(y1)) if y1.size else 0.0)
        if np.max(np.abs(dz)) <= config.newton_tol * scale:
            return x1, y1
    raise IntegrationError("corrector did not converge", t1)


def _step(dae, config, state: AugmentedDaeState, u, S, dt, jac0: PointJacobian, t1: float):
    half = 0.5 * dt
    x1, y1 = _corrector(dae, config, t1, u, state.x, state.y, jac0, half)
    jac1 = point_jacobian(dae, t1, u, x1, y1)
    if dae.n_y:
        _check_regular(jac1.Gy, config.regularity_floor, t1)
        if np.max(np.abs(jac1.g)) > 10 * config.newton_tol * max(1.0, np.max(np.abs(y1))):
            raise IntegrationError(f"algebraic residual {np.max(np.abs(jac1.g)):.3g} above tolerance", t1)
    rhs = state.X + half * jac0.hdot(state.X, state.Y, S) + half * (jac1.Hu @ S)
    n_x, n_y = dae.n_x, dae.n_y
    if n_y:
        A = np.block([[np.eye(n_x) - half * jac1.Hx, -half * jac1.Hy], [jac1.Gx, jac1.Gy]])
        sol = np.linalg.solve(A, np.vstack((rhs, np.zeros((n_y, rhs.shape[1])))))
        X1, Y1 = sol[:n_x], sol[n_x:]
    else:
        X1 = np.linalg.solve(np.eye(n_x) - half * jac1.Hx, rhs)
        Y1 = np.zeros((0, rhs.shape[1]))
    return AugmentedDaeState(t1, x1, y1, X1, Y1), jac1


def step(dae: SemiExplicitDae, config: IntegratorConfig, state: AugmentedDaeState, u_value,
         seed_row, dt: float) -> AugmentedDaeState:
    """Advance one trapezoidal step of size ``dt`` with control ``u_value``.

    ``seed_row`` is the ``(n_u, n_p)`` direction seed of the control (the
    unit row of the active subinterval).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.atleast_1d(np.asarray(u_value, dtype=float))
    S = np.atleast_2d(np.asarray(seed_row, dtype=float))
    jac0 = point_jacobian(dae, state.t, u, state.x, state.y)
    new, _ = _step(dae, config, state, u, S, dt, jac0, state.t + dt)
    return new


def integrate(dae: SemiExplicitDae, config: IntegratorConfig, control: ControlGrid,
              init: AugmentedDaeState) -> TrajectoryRecord:
    """Integrate state and sensitivities over the whole control horizon.

    Within subinterval ``i`` the control is ``control.values[i]`` and its
    direction seed is the ``i``-th unit block. ``x`` and ``X`` are carried
    across breakpoints; ``y``/``Y`` are re-solved at every step.
    """
    n_p = control.n_p
    m = config.step_count
    total = control.n_s * m
    keep_all = config.store_sensitivities == "all"
    ts = np.empty(total + 1)
    xs = np.empty((total + 1, dae.n_x))
    ys = np.empty((total + 1, dae.n_y))
    us = np.empty((total + 1, control.n_u))
    Xs = np.empty((total + 1, dae.n_x, n_p)) if keep_all else None
    Ys = np.empty((total + 1, dae.n_y, n_p)) if keep_all else None

    state = AugmentedDaeState(control.t0, np.asarray(init.x, float), np.asarray(init.y, float).reshape(dae.n_y),
                              np.asarray(init.X, float), np.asarray(init.Y, float).reshape(dae.n_y, n_p))
    ts[0], xs[0], ys[0], us[0] = state.t, state.x, state.y, control.values[0]
    if keep_all:
        Xs[0], Ys[0] = state.X, state.Y

    span = control.tf - control.t0
    branch_log = []
    k = 0
    if span > 0:
        u = control.values[0]
        jac = point_jacobian(dae, state.t, u, state.x, state.y)
        branch_log.append((state.t, jac.branches))
        for i in range(control.n_s):
            u = control.values[i]
            S = control.seed(i)
            if i > 0:
                # control jumps at the breakpoint; refresh the start-point jacobian
                jac = point_jacobian(dae, state.t, u, state.x, state.y)
            for j in range(1, m + 1):
                k += 1
                t1 = control.t0 + span * k / total
                dt = t1 - state.t
                state, jac = _step(dae, config, state, u, S, dt, jac, t1)
                if jac.branches != branch_log[-1][1]:
                    branch_log.append((t1, jac.branches))
                ts[k], xs[k], ys[k], us[k] = t1, state.x, state.y, u
                if keep_all:
                    Xs[k], Ys[k] = state.X, state.Y
    else:
        ts, xs, ys, us = ts[:1], xs[:1], ys[:1], us[:1]
        if keep_all:
            Xs, Ys = Xs[:1], Ys[:1]
    return TrajectoryRecord(t=ts, x=xs, y=ys, u=us, X_final=state.X, Y_final=state.Y, X=Xs, Y=Ys,
                            branch_log=tuple(branch_log))
