"""Run configuration: key=value files, command-line overrides and validation."""
from __future__ import annotations

import hashlib
import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, fields
from functools import cached_property
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CONF_BATCH,
    CONF_BETA_DIRS,
    CONF_CLASSES,
    CONF_COLS,
    CONF_DATA,
    CONF_DELTA,
    CONF_EPOCHS,
    CONF_INPUT_DIM,
    CONF_INPUT_DIST,
    CONF_K_CONST,
    CONF_LR,
    CONF_MODE,
    CONF_N_TEST,
    CONF_N_TRAIN,
    CONF_NOISE,
    CONF_OBSERVED,
    CONF_OUT,
    CONF_RANK,
    CONF_RATES,
    CONF_ROWS,
    CONF_SEEDS,
    CONF_SYMMETRIZE,
    CONF_TASK,
    CONF_TEACHER_WIDTH,
    CONF_TEST_FRACTION,
    CONF_WIDTHS,
    CONF_WORKERS,
    DATA_MNIST,
    DATA_MOVIELENS,
    DATA_SYNTHETIC,
    DEFAULT_BETA_DIRS,
    DEFAULT_CLASSES,
    DEFAULT_DELTA,
    DEFAULT_K_CONST,
    DEFAULT_MODE,
    DEFAULT_OUT,
    DEFAULT_SEEDS,
    DEFAULT_TEST_FRACTION,
    DEFAULT_WORKERS,
    FLOAT_FORMAT,
    INPUT_FOLDED,
    INPUT_GAUSSIAN,
    MODE_MASK,
    MODE_PENALTY,
    TASK_DEFAULTS,
    TASK_MC,
    TASK_RELU,
)
from .exceptions import ConfigError

_LOGGER = logging.getLogger(__name__)

# Keys that do not change what a run computes
_UNHASHED = frozenset({CONF_SEEDS, CONF_OUT, CONF_WORKERS})

_DATA_TASK = {DATA_MOVIELENS: TASK_MC, DATA_MNIST: TASK_RELU}


@dataclass(frozen=True)
class DataSource:
    """Where examples come from: "synthetic", "movielens:PATH" or "mnist:PATHS".

    MNIST takes train images and labels, optionally followed by test images
    and labels, comma-separated.
    """

    kind: str
    paths: tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str) -> DataSource:
        """Parse a data source descriptor."""
        kind, _, rest = str(text).partition(":")
        kind = kind.strip()
        paths = tuple(part.strip() for part in rest.split(",") if part.strip())
        if kind == DATA_SYNTHETIC and not paths:
            return cls(kind)
        if kind == DATA_MOVIELENS and len(paths) == 1:
            return cls(kind, paths)
        if kind == DATA_MNIST and len(paths) in (2, 4):
            return cls(kind, paths)
        raise vol.Invalid(f"unrecognized data source {text!r}")

    def __str__(self) -> str:
        """Render the descriptor back to text."""
        if not self.paths:
            return self.kind
        return f"{self.kind}:{','.join(self.paths)}"


def _number_list(
    kind: type,
    minimum: float | None = None,
    maximum: float | None = None,
    max_included: bool = True,
) -> Callable[[Any], tuple[Any, ...]]:
    """Validator accepting a scalar, a sequence or a comma-separated string."""
    item = vol.All(vol.Coerce(kind), vol.Range(min=minimum, max=maximum, max_included=max_included))

    def validate(value: Any) -> tuple[Any, ...]:
        if isinstance(value, str):
            parts: list[Any] = [part.strip() for part in value.split(",") if part.strip()]
        elif isinstance(value, (list, tuple)):
            parts = list(value)
        else:
            parts = [value]
        if not parts:
            raise vol.Invalid("expected at least one value")
        return tuple(item(part) for part in parts)

    return validate


def _class_pair(value: Any) -> tuple[int, int]:
    pair = _number_list(int, 0)(value)
    if len(pair) != 2 or pair[0] == pair[1]:
        raise vol.Invalid("expected two distinct class labels")
    return pair[0], pair[1]


def _positive(kind: type) -> vol.All:
    return vol.All(vol.Coerce(kind), vol.Range(min=1))


def _fraction(max_included: bool = False) -> vol.All:
    return vol.All(
        vol.Coerce(float),
        vol.Range(min=0.0, max=1.0, min_included=False, max_included=max_included),
    )


CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_TASK): vol.In([TASK_MC, TASK_RELU]),
        vol.Optional(CONF_DATA, default=DATA_SYNTHETIC): DataSource.parse,
        vol.Optional(CONF_WIDTHS): _number_list(int, 1),
        vol.Optional(CONF_RATES): _number_list(float, 0.0, 1.0, max_included=False),
        vol.Optional(CONF_LR): vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False)),
        vol.Optional(CONF_BATCH): _positive(int),
        vol.Optional(CONF_EPOCHS): _positive(int),
        vol.Optional(CONF_SEEDS, default=DEFAULT_SEEDS): _number_list(int, 0),
        vol.Optional(CONF_MODE, default=DEFAULT_MODE): vol.In([MODE_MASK, MODE_PENALTY]),
        vol.Optional(CONF_SYMMETRIZE, default=False): vol.Boolean(),
        vol.Optional(CONF_OUT, default=DEFAULT_OUT): str,
        vol.Optional(CONF_DELTA, default=DEFAULT_DELTA): _fraction(),
        vol.Optional(CONF_ROWS): _positive(int),
        vol.Optional(CONF_COLS): _positive(int),
        vol.Optional(CONF_RANK): _positive(int),
        vol.Optional(CONF_OBSERVED): _fraction(max_included=True),
        vol.Optional(CONF_NOISE): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
        vol.Optional(CONF_INPUT_DIM): _positive(int),
        vol.Optional(CONF_TEACHER_WIDTH): _positive(int),
        vol.Optional(CONF_N_TRAIN): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional(CONF_N_TEST): _positive(int),
        vol.Optional(CONF_INPUT_DIST): vol.In([INPUT_GAUSSIAN, INPUT_FOLDED]),
        vol.Optional(CONF_TEST_FRACTION, default=DEFAULT_TEST_FRACTION): _fraction(),
        vol.Optional(CONF_CLASSES, default=DEFAULT_CLASSES): _class_pair,
        vol.Optional(CONF_BETA_DIRS, default=DEFAULT_BETA_DIRS): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): _positive(int),
        vol.Optional(CONF_K_CONST, default=DEFAULT_K_CONST): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
    }
)


@dataclass(frozen=True, kw_only=True)
class RunConfig:
    """Validated settings of one experiment sweep.

    Synthetic-task sizes that do not apply to the task stay None.
    """

    task: str
    data: DataSource
    widths: tuple[int, ...]
    rates: tuple[float, ...]
    lr: float
    batch_size: int
    epochs: int
    seeds: tuple[int, ...]
    mode: str
    symmetrize: bool
    out: str
    delta: float
    rows: int | None = None
    cols: int | None = None
    rank: int | None = None
    observed_fraction: float | None = None
    noise_std: float | None = None
    input_dim: int | None = None
    teacher_width: int | None = None
    n_train: int | None = None
    n_test: int | None = None
    input_dist: str | None = None
    test_fraction: float
    classes: tuple[int, int]
    beta_dirs: int
    workers: int
    k_const: float

    @cached_property
    def config_hash(self) -> str:
        """SHA-256 of the canonical key=value rendering of the computing keys."""
        lines = [
            f"{item.name}={_canonical(getattr(self, item.name))}"
            for item in sorted(fields(self), key=lambda item: item.name)
            if item.name not in _UNHASHED
        ]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    def run_id(self, seed: int, rate: float, width: int) -> str:
        """Identifier embedding the task, config hash, seed, rate and width."""
        return f"{self.task}-{self.config_hash[:10]}-s{seed}-p{rate:g}-w{width}"


def _canonical(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, FLOAT_FORMAT)
    if isinstance(value, tuple):
        return ",".join(_canonical(item) for item in value)
    return str(value)


def load_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat key=value file; '#' starts a comment, blank lines are skipped."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        _LOGGER.error("Cannot read config file %s: %s", path, err)
        raise ConfigError(f"cannot read config file {path}: {err}") from err

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def build_config(
    file_values: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Merge defaults, file values and overrides (highest precedence) and validate.

    Override entries that are None are ignored.
    """
    merged: dict[str, Any] = dict(file_values or {})
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        validated = CONFIG_SCHEMA(merged)
    except vol.Invalid as err:
        key = ".".join(str(part) for part in err.path) or "config"
        raise ConfigError(f"invalid {key}: {err.msg}") from err

    task = validated[CONF_TASK]
    source: DataSource = validated[CONF_DATA]
    expected = _DATA_TASK.get(source.kind)
    if expected is not None and expected != task:
        raise ConfigError(f"data source {source.kind} cannot be used with task {task}")

    values = {**TASK_DEFAULTS[task], **validated}
    if task == TASK_MC and values[CONF_RANK] > min(values[CONF_ROWS], values[CONF_COLS]):
        raise ConfigError(f"invalid rank: {values[CONF_RANK]} exceeds the matrix dimensions")
    _LOGGER.debug("Resolved config: %s", values)
    return RunConfig(**values)
