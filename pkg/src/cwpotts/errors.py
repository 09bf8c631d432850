"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code, so the runner can translate any
failure into a structured error record without string matching.
"""

from __future__ import annotations

from typing import Any


class CwpError(Exception):
    """Base class. ``details`` is attached verbatim to CLI error records."""

    exit_code = 1

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.details = details


class DomainError(CwpError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 2


class ArgumentError(CwpError, ValueError):
    """Structurally invalid arguments (overlapping sets, bad flows, ...)."""

    exit_code = 2


class ConfigError(CwpError, ValueError):
    """Experiment configuration failed validation."""

    exit_code = 2


class NumericError(CwpError, ArithmeticError):
    """A root finder, bisection or linear solver did not converge."""

    exit_code = 3


class ClassificationError(NumericError):
    """A converged critical point has the wrong Hessian inertia."""


class ConstructionError(NumericError):
    """A chain failed a structural check while being assembled."""


class SizeGuardError(CwpError, MemoryError):
    """The requested state space exceeds a configured size limit."""

    exit_code = 4
