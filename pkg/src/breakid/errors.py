"""Exception hierarchy shared by every stage of the pipeline."""
from __future__ import annotations


class BreakIDError(Exception):
    """Base class for all package errors."""


class DomainError(BreakIDError, ValueError):
    """An argument lies outside its admissible domain."""


class DimensionMismatchError(BreakIDError, ValueError):
    """Array shapes disagree with the grid or time axis."""


class ParseError(BreakIDError, ValueError):
    """A snapshot or manifest file could not be parsed.

    The message carries the file name, line and field of the first problem.
    """

    def __init__(self, path, line: int | None, field: int | None, reason: str):
        self.path = str(path)
        self.line = line
        self.field = field
        self.reason = reason
        where = self.path
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" field {field}"
        super().__init__(f"{where}: {reason}")


class IncompatibleGridError(BreakIDError, ValueError):
    """A delta kernel or term cannot be evaluated exactly on the grid."""


class InfeasibleError(BreakIDError):
    """The inequality-constrained least-squares problem has no feasible point."""


class NoModelError(BreakIDError):
    """Every candidate model in a pool was empty."""


class IntegrationError(BreakIDError):
    """The time integrator failed; ``diagnostics`` holds the solver report."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(BreakIDError, ValueError):
    """A pipeline configuration failed validation."""


class StageError(BreakIDError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
