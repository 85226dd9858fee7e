"""Exception hierarchy shared across the package.

The CLI maps each family onto a stable exit code, so new errors should
subclass one of these rather than ``Exception`` directly.
"""

from .ldcore import LDError


class ConfigError(ValueError):
    """Scenario configuration failed validation."""


class DataError(ValueError):
    """External data (e.g. a wind table) is malformed or out of range."""


class ModelError(RuntimeError):
    """Model evaluation, initialization or integration failed."""


class InitError(ModelError):
    """Consistent initialization or a steady-state solve did not converge."""


class IntegrationError(ModelError):
    """The corrector failed to converge during time stepping."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class RegularityError(ModelError):
    """The algebraic Jacobian dg/dy became (numerically) singular."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class EvaluationError(ModelError):
    """Shooting evaluation failed at a specific decision vector."""

    def __init__(self, message: str, p=None):
        super().__init__(message)
        self.p = p


__all__ = [
    "ConfigError",
    "DataError",
    "ModelError",
    "InitError",
    "IntegrationError",
    "RegularityError",
    "EvaluationError",
    "LDError",
]
