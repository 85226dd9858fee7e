"""Bound-constrained quasi-Newton minimization with equality constraints.

Equality constraints are handled by an augmented Lagrangian outer loop; each
inner problem is minimized by projected BFGS with an Armijo backtracking line
search along the projection arc. Gradients may be generalized gradients of a
nonsmooth objective: curvature pairs that fail the curvature test are skipped
rather than trusted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ModelError
from .ldcore import LDError

__all__ = [
    "NlpSpec",
    "NlpResult",
    "IterationRecord",
    "LineSearchError",
    "minimize",
    "bfgs_update",
    "line_search",
]

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 20
# secant refinement of an accepted step: skipped within this distance of 1, capped above
REFINE_TOL = 1e-3
REFINE_MAX = 10.0
REFINE_STEPS = 2
REFINE_QUAD_TOL = 1e-2


class LineSearchError(RuntimeError):
    """No Armijo step was found, or the direction is not a descent direction."""


@dataclass(frozen=True)
class NlpSpec:
    """Problem description for :func:`minimize`.

    ``fun(p)`` returns ``(phi, grad)`` or, when equality constraints are
    present, ``(phi, grad, c, J)`` with constraint values ``c`` and their
    Jacobian ``J``. The constraints are ``c(p) == targets``.
    """

    n_p: int
    fun: Callable
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    targets: np.ndarray | None = None
    grad_tol: float = 1e-6
    step_tol: float = 1e-10
    constraint_tol: float = 1e-6
    max_iter: int = 500
    rho0: float = 10.0
    stagnation_tol: float = 1e-12
    stagnation_window: int = 5
    # iterations allowed per multiplier estimate while still infeasible
    inner_max_iter: int = 50
    log_path: str | None = None

    def __post_init__(self):
        lo = np.full(self.n_p, -np.inf) if self.lower is None else np.array(self.lower, dtype=float).reshape(self.n_p)
        hi = np.full(self.n_p, np.inf) if self.upper is None else np.array(self.upper, dtype=float).reshape(self.n_p)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        tg = np.zeros(0) if self.targets is None else np.array(self.targets, dtype=float).ravel()
        object.__setattr__(self, "targets", tg)
        for name in ("grad_tol", "step_tol", "constraint_tol", "rho0", "stagnation_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.stagnation_window < 1 or self.inner_max_iter < 1:
            raise ValueError("max_iter and stagnation_window must be positive")

    @property
    def n_eq(self) -> int:
        return self.targets.size


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    phi: float
    merit: float
    step: float
    grad_norm: float
    constraint_violation: float
    outer: int


@dataclass(frozen=True)
class NlpResult:
    p_star: np.ndarray
    phi_star: float
    grad_norm_final: float
    constraint_violation_final: float
    iterations: int
    status: str
    history: tuple[IterationRecord, ...] = ()
    message: str = ""
    failed_p: np.ndarray | None = None
    n_evals: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def bfgs_update(H_inv: np.ndarray, s, y_diff) -> np.ndarray:
    """Inverse BFGS update; returns ``H_inv`` unchanged on weak curvature."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y_diff, dtype=float)
    sy = float(s @ y)
    if not sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
        return H_inv
    rho = 1.0 / sy
    Hy = H_inv @ y
    # (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded
    H = H_inv - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
    return 0.5 * (H + H.T)


def _project(p, lo, hi):
    return np.minimum(np.maximum(p, lo), hi)


def line_search(merit: Callable, p, direction, grad, f0: float | None = None,
                project: Callable | None = None) -> tuple[float, np.ndarray, object]:
    """Backtracking Armijo search over ``gamma in {1, 1/2, ..., 2**-20}``.

    ``merit(q)`` may return a float or a tuple whose first entry is the merit
    value; the extra payload is handed back for the accepted point. With
    ``project`` the trial points are ``project(p + gamma d)`` and the Armijo
    test uses the actual displacement.

    Returns
    -------
    gamma, accepted point, merit payload of the accepted point.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(direction, dtype=float)
    g = np.asarray(grad, dtype=float)
    slope = float(g @ d)
    if not slope < 0:
        raise LineSearchError(f"not a descent direction (g.d = {slope:.3g})")
    if f0 is None:
        f0 = _merit_value(merit(p))
    last_exc = None
    gamma = 1.0
    for _ in range(MAX_HALVINGS + 1):
        q = p + gamma * d
        if project is not None:
            q = project(q)
        dec = float(g @ (q - p))
        if dec < 0:
            try:
                out = merit(q)
            except (ModelError, LDError, ValueError, ArithmeticError) as exc:
                last_exc = exc
            else:
                fq = _merit_value(out)
                if math.isfinite(fq) and fq <= f0 + ARMIJO_C1 * dec:
                    return gamma, q, out
        gamma *= 0.5
    err = LineSearchError(f"no Armijo step down to gamma = 2**-{MAX_HALVINGS}")
    err.last_exception = last_exc
    raise err


def _merit_value(out) -> float:
    return float(out[0]) if isinstance(out, tuple) else float(out)


@dataclass
class _Point:
    p: np.ndarray
    phi: float
    grad: np.ndarray
    c: np.ndarray
    J: np.ndarray


class _Evaluator:
    def __init__(self, spec: NlpSpec):
        self.spec = spec
        self.count = 0

    def __call__(self, p) -> _Point:
        self.count += 1
        try:
            out = self.spec.fun(np.array(p, dtype=float))
        except (ModelError, LDError, ValueError, ArithmeticError) as exc:
            if getattr(exc, "p", None) is None:
                exc.p = np.array(p, dtype=float)
            raise
        if self.spec.n_eq:
            phi, g, c, J = out
            c = np.asarray(c, dtype=float).ravel() - self.spec.targets
            J = np.asarray(J, dtype=float).reshape(self.spec.n_eq, self.spec.n_p)
        else:
            phi, g = out[0], out[1]
            c, J = np.zeros(0), np.zeros((0, self.spec.n_p))
        g = np.asarray(g, dtype=float).ravel()
        phi = float(phi)
        if not (math.isfinite(phi) and np.all(np.isfinite(g)) and np.all(np.isfinite(c)) and np.all(np.isfinite(J))):
            raise ArithmeticError("objective callback returned non-finite values")
        return _Point(np.array(p, dtype=float), phi, g, c, J)


def _merit(pt: _Point, lam, rho) -> tuple[float, np.ndarray]:
    r = pt.c
    val = pt.phi + float(lam @ r) + 0.5 * rho * float(r @ r)
    grad = pt.grad + pt.J.T @ (lam + rho * r)
    return val, grad


def _proj_grad_norm(p, g, lo, hi) -> float:
    return float(np.max(np.abs(_project(p - g, lo, hi) - p))) if p.size else 0.0


def _violation(pt: _Point) -> float:
    return float(np.max(np.abs(pt.c))) if pt.c.size else 0.0


def minimize(spec: NlpSpec, p0) -> NlpResult:
    """Minimize ``phi`` subject to bounds and equality constraints.

    Termination (``converged``) requires constraint violation below
    ``constraint_tol`` together with one of: projected merit-gradient norm
    below ``grad_tol``; step norm below ``step_tol``; relative merit change
    below ``stagnation_tol`` over ``stagnation_window`` iterations. The last
    two cover nonsmooth minimizers where no generalized gradient vanishes.
    """
    lo, hi = spec.lower, spec.upper
    p = np.array(p0, dtype=float).ravel()
    if p.shape != (spec.n_p,):
        raise ValueError(f"p0 has {p.size} entries, expected {spec.n_p}")
    if np.any(p < lo) or np.any(p > hi):
        raise ValueError("p0 violates the bounds")
    evaluator = _Evaluator(spec)
    history: list[IterationRecord] = []

    def finish(pt, status, message="", failed=None, grad_norm=np.nan):
        res = NlpResult(
            p_star=pt.p.copy() if pt is not None else p.copy(),
            phi_star=pt.phi if pt is not None else float("nan"),
            grad_norm_final=grad_norm,
            constraint_violation_final=_violation(pt) if pt is not None else float("nan"),
            iterations=len(history),
            status=status,
            history=tuple(history),
            message=message,
            failed_p=failed,
            n_evals=evaluator.count,
        )
        if spec.log_path:
            _write_log(spec.log_path, history)
        return res

    try:
        pt = evaluator(p)
    except (ModelError, LDError, ValueError, ArithmeticError) as exc:
        return finish(None, "evaluation_error", str(exc), failed=np.asarray(getattr(exc, "p", p)))

    lam = np.zeros(spec.n_eq)
    rho = spec.rho0
    outer = 0
    prev_violation = _violation(pt)
    inner_tol = max(spec.grad_tol, 1e-2)
    # looser stagnation test for inner solves that are still infeasible
    inner_stag = max(spec.stagnation_tol, 1e-3)
    H = np.eye(spec.n_p)
    scaled = False
    merit, g = _merit(pt, lam, rho)
    gnorm = _proj_grad_norm(pt.p, g, lo, hi)
    recent = [merit]
    # why the current inner (fixed multiplier) minimization stopped, if it did
    stop = ""
    ls_diag = ""
    fallback = 0

    while True:
        viol = _violation(pt)
        feasible = viol < spec.constraint_tol
        if not stop:
            if gnorm < spec.grad_tol:
                stop = "stationary"
            elif _stagnated(recent, spec.stagnation_window, spec.stagnation_tol):
                stop = "stagnation"
            elif not feasible and _stagnated(recent, spec.stagnation_window, inner_stag):
                stop = "inner_stagnation"
            elif not feasible and len(recent) > spec.inner_max_iter:
                stop = "inner_iteration_cap"
            elif not feasible and gnorm < inner_tol:
                stop = "inner_tolerance"
        if stop:
            if feasible and stop != "line_search":
                return finish(pt, "converged", stop, grad_norm=gnorm)
            if spec.n_eq == 0 or (feasible and stop == "line_search"):
                return finish(pt, "line_search_failure", ls_diag, grad_norm=gnorm)
            # augmented Lagrangian outer update
            lam = lam + rho * pt.c
            if viol > 0.5 * prev_violation:
                rho *= 10.0
            prev_violation = viol
            inner_tol = max(spec.grad_tol, 0.1 * inner_tol)
            inner_stag = max(spec.stagnation_tol, 0.1 * inner_stag)
            outer += 1
            merit, g = _merit(pt, lam, rho)
            gnorm = _proj_grad_norm(pt.p, g, lo, hi)
            recent = [merit]
            stop = ""
            if rho > 1e12:
                return finish(pt, "max_iter", "penalty parameter diverged", grad_norm=gnorm)
            continue

        if len(history) >= spec.max_iter:
            return finish(pt, "max_iter", "iteration limit reached", grad_norm=gnorm)

        # active set: variables pinned at a bound with the gradient pushing out
        at_lo = (pt.p <= lo) & (g > 0)
        at_hi = (pt.p >= hi) & (g < 0)
        free = ~(at_lo | at_hi)
        steepest = np.where(free, -g, 0.0)
        gmax = float(np.max(np.abs(steepest))) if steepest.size else 0.0
        # until curvature information exists, try a unit (max-norm) step
        unit = steepest / gmax if 0.0 < gmax < 1.0 else steepest
        if fallback == 0 and scaled:
            d = np.zeros(spec.n_p)
            d[free] = -(H[np.ix_(free, free)] @ g[free])
            if not float(g @ d) < 0:
                H = np.eye(spec.n_p)
                scaled = False
                d = unit
        else:
            d = steepest if fallback >= 2 else unit

        def trial(q):
            qt = evaluator(q)
            m, _ = _merit(qt, lam, rho)
            return m, qt

        try:
            gamma, q, (m_new, pt_new) = line_search(trial, pt.p, d, g, merit, lambda q: _project(q, lo, hi))
        except LineSearchError as exc:
            if fallback < 2 and not np.array_equal(d, steepest):
                # fall back to the steepest-descent directions before giving up
                H = np.eye(spec.n_p)
                scaled = False
                fallback = 2 if np.array_equal(d, unit) else 1
                continue
            failed = getattr(exc, "last_exception", None)
            if failed is not None:
                return finish(pt, "evaluation_error", str(failed), failed=np.asarray(failed.p), grad_norm=gnorm)
            ls_diag = f"{exc}; |pg|={gnorm:.3g}, merit={merit:.12g}, violation={viol:.3g}"
            stop = "line_search"
            continue

        fallback = 0
        s = q - pt.p
        _, g_new = _merit(pt_new, lam, rho)
        # curvature only along free variables; pinned ones would pollute y
        yv = np.where(free, g_new - g, 0.0)
        sy = float(s @ yv)
        refined = _refine(evaluator, lambda t: _merit(t, lam, rho)[0], lambda t: _merit(t, lam, rho)[1],
                          pt, g, merit, q, pt_new, m_new, lo, hi)
        if refined is not None:
            q, pt_new, m_new = refined
            s = q - pt.p
            _, g_new = _merit(pt_new, lam, rho)
            yv = np.where(free, g_new - g, 0.0)
            sy = float(s @ yv)
        if not scaled and sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            # Shanno-Phua initial scaling before the first update
            H = np.eye(spec.n_p) * (sy / float(yv @ yv))
            scaled = True
        H = bfgs_update(H, s, yv)
        step = float(np.linalg.norm(s))
        pt, merit, g = pt_new, m_new, g_new
        gnorm = _proj_grad_norm(pt.p, g, lo, hi)
        recent.append(merit)
        history.append(IterationRecord(len(history) + 1, pt.phi, merit, step, gnorm, _violation(pt), outer))
        if step < spec.step_tol:
            stop = "small_step"


def _refine(evaluator, merit_of, grad_of, pt: _Point, g, m0: float, q, pt_q, m_acc: float, lo, hi):
    """Refine an accepted step ``s = q - p`` along its own line.

    With positive curvature between the end points the secant root of the
    directional derivative is tried (the exact line minimizer for a quadratic
    merit); otherwise the step is doubled. Trial points are kept only while
    they lower the merit. Nothing is tried unless the merit change over the
    accepted step matches the trapezoid rule on the end slopes, which holds
    for quadratics and fails across kinks.
    """
    s = q - pt.p
    slope0 = float(g @ s)
    scale, best = 1.0, None
    slope = float(grad_of(pt_q) @ s)
    drop = m_acc - m0
    if abs(drop - 0.5 * (slope0 + slope)) > REFINE_QUAD_TOL * abs(drop):
        return None
    for _ in range(REFINE_STEPS):
        curv = slope - slope0
        gamma = -slope0 * scale / curv if curv > 0 else 2.0 * scale
        gamma = min(gamma, REFINE_MAX)
        if not gamma > 0 or abs(gamma / scale - 1.0) <= REFINE_TOL:
            break
        r = _project(pt.p + gamma * s, lo, hi)
        try:
            pt_r = evaluator(r)
            m_r = merit_of(pt_r)
        except (ModelError, LDError, ValueError, ArithmeticError):
            break
        if not (math.isfinite(m_r) and m_r < m_acc):
            break
        scale, best, m_acc = gamma, (r, pt_r, m_r), m_r
        slope = float(grad_of(pt_r) @ s)
    return best


def _stagnated(recent: list, window: int, tol: float) -> bool:
    if len(recent) <= window:
        return False
    old, new = recent[-window - 1], recent[-1]
    return abs(old - new) <= tol * max(1.0, abs(old))


def _write_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "phi", "merit", "step", "grad_norm", "constraint_violation"])
        for r in history:
            w.writerow([r.iter, repr(r.phi), repr(r.merit), repr(r.step), repr(r.grad_norm),
                        repr(r.constraint_violation)])
