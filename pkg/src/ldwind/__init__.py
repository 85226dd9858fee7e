"""Nonsmooth optimal control of a wind turbine DAE with LD-derivatives.

Modules
-------
ldcore    LD-derivative arithmetic (values with lexicographic directional rows)
daesim    trapezoidal integration of semi-explicit DAEs with sensitivities
ocp       single-shooting objective, generalized gradient and constraints
nlp       projected BFGS with an augmented Lagrangian for equalities
wtps      the wind turbine power system model, wind profiles, steady states
bench     block-move benchmark and method comparisons
cli       batch front end
"""

from .exceptions import (
    ConfigError,
    DataError,
    EvaluationError,
    InitError,
    IntegrationError,
    LDError,
    ModelError,
    RegularityError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EvaluationError",
    "InitError",
    "IntegrationError",
    "LDError",
    "ModelError",
    "RegularityError",
    "__version__",
]
