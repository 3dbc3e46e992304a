"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SeusegError(Exception):
    """Base class for all package errors."""


class DimensionError(SeusegError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(SeusegError, ValueError):
    """A structural parameter (kernel size, stride, extent) is invalid."""


class ContractError(SeusegError, ValueError):
    """A call violated a documented precondition."""


class DataError(SeusegError, ValueError):
    """Input data is malformed (unknown token, non one-hot mask, ...)."""


class FormatError(SeusegError, ValueError):
    """A file could not be parsed.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GradientCheckError(SeusegError, ArithmeticError):
    """Finite-difference or analytic gradient produced a non-finite value."""


class TrainingError(SeusegError, RuntimeError):
    """Optimization diverged (NaN loss or gradient)."""
