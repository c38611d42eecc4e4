"""CSV persistence of metrics and measured quantities."""
from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

from ..const import QUANTITY_HEADER, RECORD_HEADER
from ..exceptions import ParseError
from ..records import BoundQuantities, ExperimentRecord

_LOGGER = logging.getLogger(__name__)


def _write(path: str | Path, header: Sequence[str], rows: Iterable[list[str]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read(path: str | Path, header: Sequence[str]) -> list[dict[str, str]]:
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != tuple(header):
                raise ParseError(f"unexpected header {reader.fieldnames}", line=1)
            return list(reader)
    except OSError as err:
        _LOGGER.error("Cannot read %s: %s", path, err)
        raise ParseError(f"cannot read {path}: {err}") from err


def write_records(records: Iterable[ExperimentRecord], path: str | Path) -> None:
    """Write metrics rows under the fixed header, in the given order."""
    _write(path, RECORD_HEADER, (record.to_row() for record in records))


def read_records(path: str | Path) -> list[ExperimentRecord]:
    """Read a metrics CSV written by write_records."""
    rows = _read(path, RECORD_HEADER)
    records = []
    for number, row in enumerate(rows, start=2):
        try:
            records.append(ExperimentRecord.from_row(row))
        except (TypeError, ValueError) as err:
            raise ParseError(f"malformed metrics row: {err}", line=number) from err
    return records


def write_quantities(rows: Iterable[BoundQuantities], path: str | Path) -> None:
    """Write measured-quantity rows for the bounds report."""
    _write(path, QUANTITY_HEADER, (row.to_row() for row in rows))


def read_quantities(path: str | Path) -> list[BoundQuantities]:
    """Read a measured-quantities CSV."""
    rows = _read(path, QUANTITY_HEADER)
    quantities = []
    for number, row in enumerate(rows, start=2):
        try:
            quantities.append(BoundQuantities.from_row(row))
        except (TypeError, ValueError) as err:
            raise ParseError(f"malformed quantities row: {err}", line=number) from err
    return quantities
