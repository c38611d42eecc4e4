"""Tests for run configuration."""
from __future__ import annotations

from pathlib import Path

import pytest
import voluptuous as vol

from dropout_capacity.config import DataSource, build_config, load_config_file
from dropout_capacity.const import DEFAULT_SEEDS, TASK_DEFAULTS
from dropout_capacity.exceptions import ConfigError


def test_task_defaults_applied() -> None:
    """Unset task keys come from the task defaults."""
    config = build_config(overrides={"task": "relu"})
    assert config.lr == TASK_DEFAULTS["relu"]["lr"]
    assert config.widths == (32, 128)
    assert config.seeds == DEFAULT_SEEDS
    assert config.rows is None
    assert config.input_dim == 20


def test_precedence() -> None:
    """Overrides beat file values which beat defaults; None overrides are ignored."""
    config = build_config({"task": "mc", "lr": "0.5", "epochs": "7"}, {"lr": 0.25, "epochs": None})
    assert config.lr == 0.25
    assert config.epochs == 7
    assert config.batch_size == TASK_DEFAULTS["mc"]["batch_size"]


def test_list_values() -> None:
    """Comma-separated strings and sequences both parse."""
    config = build_config({"task": "mc", "rates": "0, 0.25", "seeds": "3,1"}, {"widths": (4, 8)})
    assert config.rates == (0.0, 0.25)
    assert config.seeds == (3, 1)
    assert config.widths == (4, 8)


@pytest.mark.parametrize(
    ("values", "key"),
    [
        ({"task": "mc", "rates": "1.0"}, "rates"),
        ({"task": "mc", "widths": "0"}, "widths"),
        ({"task": "mc", "lr": "-1"}, "lr"),
        ({"task": "mc", "delta": "1"}, "delta"),
        ({"task": "mc", "mode": "both"}, "mode"),
        ({"task": "mc", "seeds": "-1"}, "seeds"),
        ({"task": "nn"}, "task"),
        ({"task": "relu", "classes": "4,4"}, "classes"),
        ({"task": "mc", "unknown": "1"}, "unknown"),
    ],
)
def test_invalid_values(values: dict[str, str], key: str) -> None:
    """Invalid entries name the offending key."""
    with pytest.raises(ConfigError, match=f"invalid {key}"):
        build_config(values)


def test_missing_task() -> None:
    """The task is required."""
    with pytest.raises(ConfigError, match="task"):
        build_config({})


def test_rank_exceeds_dimensions() -> None:
    """Rank larger than the matrix is refused."""
    with pytest.raises(ConfigError, match="rank"):
        build_config({"task": "mc", "rows": "3", "cols": "4", "rank": "5"})


def test_data_source_task_mismatch() -> None:
    """MovieLens is a completion source and MNIST a network source."""
    with pytest.raises(ConfigError):
        build_config({"task": "relu", "data": "movielens:ratings.dat"})
    with pytest.raises(ConfigError):
        build_config({"task": "mc", "data": "mnist:a,b"})


@pytest.mark.parametrize(
    ("text", "kind", "paths"),
    [
        ("synthetic", "synthetic", ()),
        ("movielens:/data/ratings.dat", "movielens", ("/data/ratings.dat",)),
        ("mnist:a,b", "mnist", ("a", "b")),
        ("mnist:a, b, c, d", "mnist", ("a", "b", "c", "d")),
    ],
)
def test_data_source_parse(text: str, kind: str, paths: tuple[str, ...]) -> None:
    """Descriptors parse into kind and paths."""
    source = DataSource.parse(text)
    assert (source.kind, source.paths) == (kind, paths)
    assert DataSource.parse(str(source)) == source


@pytest.mark.parametrize("text", ["movielens", "mnist:a", "mnist:a,b,c", "csv:x", "synthetic:x"])
def test_data_source_rejects(text: str) -> None:
    """Malformed descriptors raise."""
    with pytest.raises(vol.Invalid):
        DataSource.parse(text)


def test_config_hash_ignores_bookkeeping_keys() -> None:
    """Seeds, output path and worker count do not change the hash."""
    base = build_config({"task": "mc"})
    other = build_config({"task": "mc", "seeds": "5", "out": "x.csv", "workers": "4"})
    assert base.config_hash == other.config_hash
    assert base.config_hash != build_config({"task": "mc", "lr": "0.3"}).config_hash
    assert len(base.config_hash) == 64


def test_run_id_format() -> None:
    """Run ids embed task, hash prefix, seed, rate and width."""
    config = build_config({"task": "mc"})
    assert config.run_id(3, 0.25, 20) == f"mc-{config.config_hash[:10]}-s3-p0.25-w20"
    assert config.run_id(0, 0.0, 5).endswith("-s0-p0-w5")


def test_load_config_file(tmp_path: Path) -> None:
    """Comments and blank lines are skipped; values are stripped."""
    path = tmp_path / "run.conf"
    path.write_text("# sweep\ntask = relu\n\nrates=0,0.5  # two rates\n")
    assert load_config_file(path) == {"task": "relu", "rates": "0,0.5"}


def test_load_config_file_errors(tmp_path: Path) -> None:
    """Lines without '=' report file and line; missing files raise."""
    path = tmp_path / "run.conf"
    path.write_text("task=mc\nbroken\n")
    with pytest.raises(ConfigError, match=r"run.conf:2"):
        load_config_file(path)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.conf")


def test_symmetrize_boolean_strings() -> None:
    """Boolean keys accept the usual spellings."""
    assert build_config({"task": "relu", "symmetrize": "true"}).symmetrize is True
    assert build_config({"task": "relu", "symmetrize": "0"}).symmetrize is False


def test_package_exports() -> None:
    """The package root exposes the config, runner and training entry points."""
    import dropout_capacity

    assert set(dropout_capacity.__all__) == {
        "DropoutCapacityError",
        "DropoutConfig",
        "ExperimentCoordinator",
        "RunConfig",
        "RunOutcome",
        "SgdSchedule",
        "TrainMode",
        "__version__",
        "build_config",
    }
