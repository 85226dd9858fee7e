"""Forward propagation of lexicographic directional (LD) derivatives.

An :class:`LDScalar` carries a value together with a row of ``k`` directional
derivatives taken in lexicographic order. Smooth elementals propagate the row
with the ordinary chain rule; ``abs``/``min``/``max`` use the first-sign and
shifted-lexicographic-minimum rules, which makes the propagated row a valid
LD-derivative for any composition of the supported elementals.

Every elemental also accepts plain floats and then returns a plain float, so
model code can be written once and evaluated either way.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from typing import Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "LDError",
    "DimensionError",
    "DomainError",
    "NonFiniteError",
    "AugmentedRow",
    "LDScalar",
    "fsign",
    "slmin",
    "ld_abs",
    "ld_min",
    "ld_max",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "softmin",
    "smooth2",
    "variables",
    "jacobian_rows",
    "branch_trace",
]


class LDError(ValueError):
    """Base class for failures raised by LD arithmetic."""


class DimensionError(LDError):
    """Operands carry direction rows of different width."""


class DomainError(LDError):
    """An elemental was evaluated outside its domain."""


class NonFiniteError(LDError):
    """An operation produced NaN or Inf."""


class AugmentedRow(NamedTuple):
    """A value followed by its directional derivatives, ``[head, tail...]``."""

    head: float
    tail: np.ndarray


# Branch tracing: when active, every nonsmooth elemental appends the id of the
# branch it selected. Used by the integrator to log selection switches.
_TRACE: contextvars.ContextVar[list | None] = contextvars.ContextVar("ld_branch_trace", default=None)


@contextlib.contextmanager
def branch_trace() -> Iterator[list]:
    """Collect the branch ids chosen by ``ld_abs``/``ld_min``/``ld_max``.

    Ids are ``0``/``1`` for min/max (first/second argument selected) and the
    first-sign ``-1``/``0``/``1`` for abs.
    """
    record: list = []
    token = _TRACE.set(record)
    try:
        yield record
    finally:
        _TRACE.reset(token)


def _record(branch: int) -> None:
    record = _TRACE.get()
    if record is not None:
        record.append(branch)


def _check_row(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("non-finite entry in augmented row")


def fsign(row: AugmentedRow | Sequence[float] | np.ndarray) -> int:
    """Sign of the first nonzero entry of ``[head, tail]``; 0 if all vanish."""
    if isinstance(row, AugmentedRow):
        flat = np.concatenate(([row.head], np.asarray(row.tail, dtype=float)))
    else:
        flat = np.asarray(row, dtype=float).ravel()
    _check_row(flat)
    nz = np.flatnonzero(flat)
    if nz.size == 0:
        return 0
    return 1 if flat[nz[0]] > 0 else -1


def _fsign_parts(head: float, tail: np.ndarray) -> int:
    if head > 0.0:
        return 1
    if head < 0.0:
        return -1
    nz = np.flatnonzero(tail)
    if nz.size == 0:
        return 0
    return 1 if tail[nz[0]] > 0 else -1


def slmin(a: AugmentedRow, b: AugmentedRow) -> np.ndarray:
    """Shifted lexicographic minimum of two augmented rows.

    Returns the tail of the lexicographically smaller row; on a complete tie
    the first argument's tail is returned.
    """
    ta = np.asarray(a.tail, dtype=float)
    tb = np.asarray(b.tail, dtype=float)
    if ta.shape != tb.shape:
        raise DimensionError(f"direction widths differ: {ta.shape[0]} vs {tb.shape[0]}")
    _check_row(np.concatenate(([a.head, b.head], ta, tb)))
    return ta if _fsign_parts(a.head - b.head, ta - tb) <= 0 else tb


class LDScalar:
    """A real value with its row of lexicographic directional derivatives."""

    __slots__ = ("val", "der")
    __array_priority__ = 1000  # keep numpy scalars from hijacking the operators

    def __init__(self, val: float, der) -> None:
        val = float(val)
        der = np.asarray(der, dtype=float)
        if der.ndim != 1 or der.shape[0] < 1:
            raise DimensionError("der must be a non-empty 1-D row")
        if not math.isfinite(val) or not np.all(np.isfinite(der)):
            raise NonFiniteError(f"non-finite LDScalar (val={val})")
        object.__setattr__(self, "val", val)
        object.__setattr__(self, "der", der)
        der.flags.writeable = False

    @classmethod
    def _raw(cls, val: float, der: np.ndarray) -> "LDScalar":
        # internal constructor: finite-checks only, no copies
        if not math.isfinite(val):
            raise NonFiniteError(f"non-finite LDScalar (val={val})")
        # cheap screen; the exact test only runs when the dot overflows
        if not math.isfinite(der.dot(der)) and not np.all(np.isfinite(der)):
            raise NonFiniteError(f"non-finite derivative row (val={val})")
        obj = object.__new__(cls)
        object.__setattr__(obj, "val", val)
        object.__setattr__(obj, "der", der)
        return obj

    @classmethod
    def constant(cls, val: float, k: int) -> "LDScalar":
        return cls._raw(float(val), np.zeros(k))

    def __setattr__(self, name, value):
        raise AttributeError("LDScalar is immutable")

    @property
    def k(self) -> int:
        return self.der.shape[0]

    @property
    def row(self) -> AugmentedRow:
        return AugmentedRow(self.val, self.der)

    def __repr__(self) -> str:
        return f"LDScalar({self.val!r}, {self.der.tolist()!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, LDScalar):
            return NotImplemented
        return self.val == other.val and np.array_equal(self.der, other.der)

    __hash__ = None

    def _coerce(self, other) -> "LDScalar":
        if isinstance(other, LDScalar):
            if other.der.shape != self.der.shape:
                raise DimensionError(f"direction widths differ: {self.k} vs {other.k}")
            return other
        return LDScalar._raw(float(other), np.zeros_like(self.der))

    def __neg__(self):
        return LDScalar._raw(-self.val, -self.der)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, LDScalar):
            o = self._coerce(other)
            return LDScalar._raw(self.val + o.val, self.der + o.der)
        return LDScalar._raw(self.val + float(other), self.der)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, LDScalar):
            o = self._coerce(other)
            return LDScalar._raw(self.val - o.val, self.der - o.der)
        return LDScalar._raw(self.val - float(other), self.der)

    def __rsub__(self, other):
        return LDScalar._raw(float(other) - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, LDScalar):
            o = self._coerce(other)
            return LDScalar._raw(self.val * o.val, self.der * o.val + self.val * o.der)
        c = float(other)
        return LDScalar._raw(self.val * c, self.der * c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, LDScalar):
            o = self._coerce(other)
            if o.val == 0.0:
                raise DomainError("division by an LDScalar with zero value")
            q = self.val / o.val
            return LDScalar._raw(q, (self.der - q * o.der) / o.val)
        c = float(other)
        if c == 0.0:
            raise DomainError("division by zero")
        return LDScalar._raw(self.val / c, self.der / c)

    def __rtruediv__(self, other):
        if self.val == 0.0:
            raise DomainError("division by an LDScalar with zero value")
        q = float(other) / self.val
        return LDScalar._raw(q, -q / self.val * self.der)

    def __pow__(self, other):
        if isinstance(other, LDScalar):
            # x**y = exp(y ln x)
            return exp(self._coerce(other) * log(self))
        n = float(other)
        if n == int(n) and n >= 0:
            v = self.val ** int(n)
            dv = n * self.val ** (int(n) - 1) if n > 0 else 0.0
            return LDScalar._raw(v, dv * self.der)
        if self.val <= 0.0:
            raise DomainError(f"pow: non-integer exponent of non-positive base {self.val}")
        v = self.val**n
        return LDScalar._raw(v, n * v / self.val * self.der)

    def __rpow__(self, other):
        base = float(other)
        if base <= 0.0:
            raise DomainError("pow: non-positive base with LD exponent")
        v = base**self.val
        return LDScalar._raw(v, v * math.log(base) * self.der)

    def __abs__(self):
        return ld_abs(self)

    def __float__(self) -> float:
        return self.val


def _smooth(x, f, df, name: str):
    if isinstance(x, LDScalar):
        return LDScalar._raw(f(x.val), df(x.val) * x.der)
    return f(float(x))


def sin(x):
    return _smooth(x, math.sin, math.cos, "sin")


def cos(x):
    return _smooth(x, math.cos, lambda v: -math.sin(v), "cos")


def tan(x):
    v = x.val if isinstance(x, LDScalar) else float(x)
    if math.cos(v) == 0.0:
        raise DomainError("tan: argument at a pole")
    return _smooth(x, math.tan, lambda v: 1.0 / math.cos(v) ** 2, "tan")


def exp(x):
    v = x.val if isinstance(x, LDScalar) else float(x)
    if v > 709.0:
        raise NonFiniteError(f"exp overflow at {v}")
    return _smooth(x, math.exp, math.exp, "exp")


def log(x):
    v = x.val if isinstance(x, LDScalar) else float(x)
    if v <= 0.0:
        raise DomainError(f"log of non-positive value {v}")
    return _smooth(x, math.log, lambda v: 1.0 / v, "log")


def sqrt(x):
    v = x.val if isinstance(x, LDScalar) else float(x)
    if v <= 0.0:
        raise DomainError(f"sqrt requires a positive value, got {v}")
    return _smooth(x, math.sqrt, lambda v: 0.5 / math.sqrt(v), "sqrt")


def tanh(x):
    return _smooth(x, math.tanh, lambda v: 1.0 - math.tanh(v) ** 2, "tanh")


def ld_abs(x):
    """Absolute value; the derivative row is scaled by the first sign."""
    if not isinstance(x, LDScalar):
        v = float(x)
        _record(1 if v > 0 else (-1 if v < 0 else 0))
        return abs(v)
    s = _fsign_parts(x.val, x.der)
    _record(s)
    return LDScalar._raw(abs(x.val), s * x.der if s else np.zeros_like(x.der))


def ld_min(x, y):
    """Minimum with the shifted-lexicographic-minimum derivative rule."""
    if not isinstance(x, LDScalar) and not isinstance(y, LDScalar):
        a, b = float(x), float(y)
        _record(0 if a <= b else 1)
        return a if a <= b else b
    if isinstance(x, LDScalar):
        y = x._coerce(y)
    else:
        x = y._coerce(x)
    first = _fsign_parts(x.val - y.val, x.der - y.der) <= 0
    _record(0 if first else 1)
    return x if first else y


def ld_max(x, y):
    """Maximum, computed as ``-min(-x, -y)``."""
    if not isinstance(x, LDScalar) and not isinstance(y, LDScalar):
        a, b = float(x), float(y)
        # same selection as -min(-a, -b)
        _record(0 if -a <= -b else 1)
        return a if -a <= -b else b
    return -ld_min(-x, -y)


def smooth2(x, y, f: float, dfdx: float, dfdy: float):
    """Lift a C1 two-argument map whose value and partials are precomputed."""
    if isinstance(x, LDScalar) or isinstance(y, LDScalar):
        ref = x if isinstance(x, LDScalar) else y
        dx = x.der if isinstance(x, LDScalar) else 0.0
        dy = y.der if isinstance(y, LDScalar) else 0.0
        if isinstance(x, LDScalar) and isinstance(y, LDScalar):
            ref._coerce(y)
        return LDScalar._raw(float(f), dfdx * dx + dfdy * dy + np.zeros_like(ref.der))
    return float(f)


def softmin(x, y, n: float):
    """Log-sum-exp soft minimum ``-ln(exp(-n x) + exp(-n y)) / n``.

    Evaluated with a shift by the smaller argument so large ``n`` cannot
    overflow.
    """
    if n <= 0:
        raise DomainError("softmin requires n > 0")
    a = x.val if isinstance(x, LDScalar) else float(x)
    b = y.val if isinstance(y, LDScalar) else float(y)
    lo = min(a, b)
    ea = math.exp(-n * (a - lo))
    eb = math.exp(-n * (b - lo))
    s = ea + eb
    val = lo - math.log(s) / n
    return smooth2(x, y, val, ea / s, eb / s)


def variables(values: Sequence[float], k: int | None = None, offset: int = 0) -> list[LDScalar]:
    """Seed ``values`` as independent LD variables along unit directions.

    Variable ``i`` gets direction ``offset + i`` in a row of width ``k``
    (default ``len(values) + offset``).
    """
    n = len(values)
    k = n + offset if k is None else k
    if offset + n > k:
        raise DimensionError("not enough directions for the requested variables")
    eye = np.eye(k)
    return [LDScalar._raw(float(v), eye[offset + i].copy()) for i, v in enumerate(values)]


def jacobian_rows(outputs: Sequence, k: int) -> np.ndarray:
    """Stack the derivative rows of ``outputs`` (floats count as constants)."""
    out = np.zeros((len(outputs), k))
    for i, o in enumerate(outputs):
        if isinstance(o, LDScalar):
            if o.k != k:
                raise DimensionError(f"output {i} has width {o.k}, expected {k}")
            out[i] = o.der
    return out


def values(outputs: Sequence) -> np.ndarray:
    """Plain values of a mixed float/LDScalar sequence."""
    return np.array([o.val if isinstance(o, LDScalar) else float(o) for o in outputs])
