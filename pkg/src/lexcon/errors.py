"""Exception types shared across the package.

The CLI maps each class to a process exit code, so new error kinds should
subclass one of these rather than ``Exception`` directly.
"""

from __future__ import annotations


class LexconError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(LexconError, ValueError):
    exit_code = 2


class DataError(LexconError, ValueError):
    exit_code = 3


class ConstraintFailure(LexconError):
    """Constrained search produced no finished, constraint-complete hypothesis.

    ``best`` holds the highest-ranked partial hypothesis so callers can
    inspect it or retry with a larger beam / length budget.
    """

    exit_code = 4

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class TrainingDiverged(LexconError, FloatingPointError):
    exit_code = 1
