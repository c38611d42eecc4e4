"""Experiment record types and their CSV column descriptions."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any

from .const import FLOAT_FORMAT


@dataclass(frozen=True, kw_only=True)
class ColumnDescription:
    """Describes one CSV column."""

    key: str
    kind: type = float
    optional: bool = False

    def render(self, value: Any) -> str:
        """Render a value for the CSV file."""
        if value is None:
            return ""
        if self.kind is float:
            return format(float(value), FLOAT_FORMAT)
        return str(value)

    def parse(self, text: str) -> Any:
        """Parse a CSV field back into a value."""
        if text == "" and self.optional:
            return None
        return self.kind(text)


RECORD_COLUMNS: tuple[ColumnDescription, ...] = (
    ColumnDescription(key="run_id", kind=str),
    ColumnDescription(key="epoch", kind=int),
    ColumnDescription(key="dropout_rate"),
    ColumnDescription(key="width", kind=int),
    ColumnDescription(key="train_loss"),
    ColumnDescription(key="test_loss"),
    ColumnDescription(key="gap"),
    ColumnDescription(key="reg_value"),
    ColumnDescription(key="alpha_hat"),
    ColumnDescription(key="beta_hat"),
    ColumnDescription(key="phi"),
    ColumnDescription(key="seed", kind=int),
)

QUANTITY_COLUMNS: tuple[ColumnDescription, ...] = (
    ColumnDescription(key="run_id", kind=str),
    ColumnDescription(key="task", kind=str),
    ColumnDescription(key="train_loss"),
    ColumnDescription(key="alpha"),
    ColumnDescription(key="beta", optional=True),
    ColumnDescription(key="x_mahal", optional=True),
    ColumnDescription(key="rank_c", kind=int, optional=True),
    ColumnDescription(key="n", kind=int),
    ColumnDescription(key="d2", kind=int),
    ColumnDescription(key="d0", kind=int, optional=True),
    ColumnDescription(key="min_pq", optional=True),
    ColumnDescription(key="spectral_norm", optional=True),
)


@dataclass(frozen=True, kw_only=True)
class ExperimentRecord:
    """One per-epoch metrics row."""

    run_id: str
    epoch: int
    dropout_rate: float
    width: int
    train_loss: float
    test_loss: float
    gap: float
    reg_value: float
    alpha_hat: float
    beta_hat: float = math.nan
    phi: float = math.nan
    seed: int

    def to_row(self) -> list[str]:
        """Render the record in header order."""
        return [column.render(getattr(self, column.key)) for column in RECORD_COLUMNS]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> ExperimentRecord:
        """Build a record from a CSV dict row."""
        return cls(**{column.key: column.parse(row[column.key]) for column in RECORD_COLUMNS})

    def same_as(self, other: ExperimentRecord) -> bool:
        """Field-wise equality treating NaN as equal to NaN."""
        for item in fields(self):
            mine, theirs = getattr(self, item.name), getattr(other, item.name)
            if isinstance(mine, float) and math.isnan(mine):
                if not (isinstance(theirs, float) and math.isnan(theirs)):
                    return False
            elif mine != theirs:
                return False
        return True


@dataclass(frozen=True, kw_only=True)
class BoundQuantities:
    """Measured quantities a bound report is evaluated from.

    task is "mc", "relu" or "relu-sym"; fields a task does not use stay None.
    """

    run_id: str
    task: str
    train_loss: float
    alpha: float
    beta: float | None = None
    x_mahal: float | None = None
    rank_c: int | None = None
    n: int
    d2: int
    d0: int | None = None
    min_pq: float | None = None
    spectral_norm: float | None = None

    def to_row(self) -> list[str]:
        """Render the quantities in header order."""
        return [column.render(getattr(self, column.key)) for column in QUANTITY_COLUMNS]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> BoundQuantities:
        """Build quantities from a CSV dict row."""
        return cls(**{column.key: column.parse(row[column.key]) for column in QUANTITY_COLUMNS})
