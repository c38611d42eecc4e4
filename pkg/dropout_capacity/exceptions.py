"""Exceptions raised by the dropout capacity package."""
from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .records import ExperimentRecord


class DropoutCapacityError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DropoutCapacityError, ValueError):
    """A scalar argument is outside its admissible range."""


class ShapeError(DropoutCapacityError, ValueError):
    """Array dimensions do not conform."""


class NonFiniteError(DropoutCapacityError, ValueError):
    """Input contains NaN or infinite entries."""


class NotPositiveSemidefiniteError(DropoutCapacityError, ValueError):
    """A matrix expected to be symmetric PSD is not."""


class RankError(DropoutCapacityError, ValueError):
    """Factor width is too small for the matrix rank."""


class ParseError(DropoutCapacityError):
    """An input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        """Initialize the error with an optional 1-based line number."""
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(DropoutCapacityError):
    """The run configuration is invalid."""


class CheckFailure(DropoutCapacityError):
    """An audit check or bound precondition failed."""


class DivergenceError(DropoutCapacityError):
    """Training loss became non-finite or exceeded the divergence limit."""

    def __init__(
        self,
        message: str,
        records: list[ExperimentRecord] | None = None,
        epoch: int | None = None,
    ) -> None:
        """Initialize with the records emitted before the abort."""
        super().__init__(message)
        self.records = list(records or [])
        self.epoch = epoch
