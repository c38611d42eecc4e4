"""MovieLens ratings reader for "UserID::MovieID::Rating::Timestamp" files."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..const import MOVIELENS_DELIMITER, MOVIELENS_FIELDS
from ..exceptions import ParseError
from ..sensing import MeasurementModel, SensingSample

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RatingsData:
    """Ratings as an indicator sample with the maps back to the raw ids.

    user_ids[i] and movie_ids[k] are the original ids of row i and column k;
    offset is the global mean removed from the ratings (0 when uncentered).
    """

    sample: SensingSample
    model: MeasurementModel
    user_ids: tuple[int, ...]
    movie_ids: tuple[int, ...]
    offset: float


def _parse_line(line: str, number: int) -> tuple[int, int, float]:
    fields = line.split(MOVIELENS_DELIMITER)
    if len(fields) != MOVIELENS_FIELDS:
        raise ParseError(f"expected {MOVIELENS_FIELDS} fields, got {len(fields)}", line=number)
    try:
        return int(fields[0]), int(fields[1]), float(fields[2])
    except ValueError as err:
        raise ParseError(f"malformed field: {err}", line=number) from err


def parse_movielens(path: str | Path, center: bool = True) -> RatingsData:
    """Parse a ratings file into a densely reindexed indicator sample.

    Row and column probabilities of the returned model are the empirical
    user and movie frequencies. Blank lines are skipped.
    """
    users: dict[int, int] = {}
    movies: dict[int, int] = {}
    rows: list[int] = []
    cols: list[int] = []
    ratings: list[float] = []
    try:
        with Path(path).open(encoding="utf-8") as handle:
            for number, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line:
                    continue
                user, movie, rating = _parse_line(line, number)
                rows.append(users.setdefault(user, len(users)))
                cols.append(movies.setdefault(movie, len(movies)))
                ratings.append(rating)
    except OSError as err:
        _LOGGER.error("Cannot read ratings file %s: %s", path, err)
        raise ParseError(f"cannot read {path}: {err}") from err
    if not ratings:
        raise ParseError(f"no ratings in {path}")

    y = np.asarray(ratings)
    offset = float(y.mean()) if center else 0.0
    row_index = np.asarray(rows, dtype=np.intp)
    col_index = np.asarray(cols, dtype=np.intp)
    shape = (len(users), len(movies))
    model = MeasurementModel.indicator(
        np.bincount(row_index, minlength=shape[0]) / y.size,
        np.bincount(col_index, minlength=shape[1]) / y.size,
    )
    _LOGGER.info("Parsed %d ratings of %d users on %d movies", y.size, *shape)
    return RatingsData(
        sample=SensingSample.indicator(row_index, col_index, y - offset, shape),
        model=model,
        user_ids=tuple(users),
        movie_ids=tuple(movies),
        offset=offset,
    )
