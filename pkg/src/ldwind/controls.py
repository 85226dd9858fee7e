"""Piecewise-constant control parameterization on a uniform grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ControlGrid:
    """Controls ``values[i]`` held on ``(tau_i, tau_{i+1}]`` for ``i < n_s``.

    The decision vector ``p`` is ``values`` flattened row-major, so the
    ``n_u`` controls of subinterval ``i`` occupy ``p[i*n_u:(i+1)*n_u]``.
    """

    t0: float
    tf: float
    n_s: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_s < 1:
            raise ValueError("n_s must be positive")
        if not self.tf >= self.t0:
            raise ValueError(f"tf ({self.tf}) precedes t0 ({self.t0})")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(self.n_s, -1)
        if vals.shape[0] != self.n_s:
            raise ValueError(f"expected {self.n_s} control rows, got {vals.shape[0]}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_vector(cls, t0: float, tf: float, n_s: int, p) -> "ControlGrid":
        return cls(t0, tf, n_s, np.asarray(p, dtype=float).reshape(n_s, -1))

    @property
    def n_u(self) -> int:
        return self.values.shape[1]

    @property
    def n_p(self) -> int:
        return self.n_s * self.n_u

    @property
    def width(self) -> float:
        return (self.tf - self.t0) / self.n_s

    def breakpoint(self, i: int) -> float:
        """``tau_i``; computed by scaling rather than accumulation."""
        if i == self.n_s:
            return self.tf
        return self.t0 + (self.tf - self.t0) * i / self.n_s

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([self.breakpoint(i) for i in range(self.n_s + 1)])

    def interval_index(self, t: float) -> int:
        """Zero-based subinterval owning ``t`` (left endpoint maps to 0)."""
        if t < self.t0 or t > self.tf:
            raise ValueError(f"t={t} outside control horizon [{self.t0}, {self.tf}]")
        if self.tf == self.t0:
            return 0
        # (tau_{i-1}, tau_i] -> i-1; start from the estimate and fix rounding
        i = max(0, math.ceil((t - self.t0) / self.width) - 1)
        i = min(i, self.n_s - 1)
        while i > 0 and t <= self.breakpoint(i):
            i -= 1
        while i < self.n_s - 1 and t > self.breakpoint(i + 1):
            i += 1
        return i

    def seed(self, i: int) -> np.ndarray:
        """Direction seed ``e_i^T (x) I_{n_u}`` of shape ``(n_u, n_p)``."""
        s = np.zeros((self.n_u, self.n_p))
        s[:, i * self.n_u:(i + 1) * self.n_u] = np.eye(self.n_u)
        return s


def control_at(grid: ControlGrid, t: float) -> np.ndarray:
    """Control value in force at time ``t`` (half-open intervals, t0 -> first)."""
    return grid.values[grid.interval_index(t)].copy()
