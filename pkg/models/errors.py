# models/errors.py
"""
Exception hierarchy shared by the services, the CLI and the results API.

Every class also derives from the built-in exception a caller would expect, so
code that catches ``ValueError`` or ``RuntimeError`` keeps working.
"""
from __future__ import annotations


class RdacError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RdacError, ValueError):
    """Operand shapes do not line up."""

    def __init__(self, message: str, *shapes: tuple[int, ...]):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class ConfigError(RdacError, ValueError):
    """Invalid run, grid or split configuration."""


class DataFormatError(RdacError, ValueError):
    """Malformed IDX input (bad magic or truncated payload)."""


class CacheError(RdacError, RuntimeError):
    """Cache container cannot be trusted and must be regenerated."""

    def __init__(self, message: str):
        super().__init__(f"{message}; regenerate it with `rdac data prepare`")


class NumericalError(RdacError, ArithmeticError):
    """A numerical kernel failed (non-finite input or no convergence)."""

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (off-diagonal residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class ContractViolation(RdacError, RuntimeError):
    """Caller broke an operation's precondition, e.g. asked to train a frozen readout."""


class DomainError(RdacError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ClassificationUnavailable(RdacError, RuntimeError):
    """Case classification needs a baseline with non-zero displacement."""


class UnknownTaskError(RdacError, KeyError):
    """No readout exists for the requested task id."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown task"


class PartialSweepError(RdacError, RuntimeError):
    """Some sweep rows failed; the table was still written."""

    def __init__(self, failed: int, total: int):
        super().__init__(f"{failed} of {total} sweep runs failed")
        self.failed = failed
        self.total = total


class DataUnavailableError(RdacError, RuntimeError):
    """Input data could not be located or downloaded."""
