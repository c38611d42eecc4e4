"""Tests for the dropcap command line."""
from __future__ import annotations

from pathlib import Path
from unittest.mock import MagicMock, patch

import pytest
from rich.console import Console

from dropout_capacity.cli import build_parser, main, quantities_path, resolve_config
from dropout_capacity.const import EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, RECORD_HEADER
from dropout_capacity.datasets import read_quantities, read_records, write_quantities
from dropout_capacity.diagnostics import AuditCheck, AuditReport
from dropout_capacity.records import BoundQuantities

MC_FLAGS = ["--seed", "0", "--seed", "1", "--rate", "0", "--rate", "0.2", "--width", "3", "--epochs", "2"]


@pytest.fixture
def mc_config(tmp_path: Path) -> Path:
    """Small synthetic completion config."""
    path = tmp_path / "mc.conf"
    path.write_text("task=mc\nrows=6\ncols=5\nrank=2\nobserved_fraction=0.8\nbatch_size=4\nlr=0.05\n")
    return path


def _console() -> Console:
    return Console(record=True, width=200)


def test_parser_requires_command() -> None:
    """A subcommand is mandatory."""
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_resolve_config_precedence(mc_config: Path) -> None:
    """Flags override the file, which overrides defaults."""
    args = build_parser().parse_args(["mc-train", "--config", str(mc_config), "--lr", "0.5", *MC_FLAGS])
    config = resolve_config(args, "mc")
    assert config.lr == 0.5
    assert config.rows == 6
    assert config.seeds == (0, 1)
    assert config.rates == (0.0, 0.2)


def test_quantities_path() -> None:
    """Quantities sit next to the metrics file."""
    assert quantities_path("out/run.csv") == Path("out/run.quantities.csv")


def test_mc_train_writes_outputs(mc_config: Path, tmp_path: Path) -> None:
    """Training writes metrics and quantities and is byte-reproducible."""
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    assert main(["mc-train", "--config", str(mc_config), "--out", str(first), *MC_FLAGS], _console()) == EXIT_OK
    assert main(
        ["mc-train", "--config", str(mc_config), "--out", str(second), "--workers", "2", *MC_FLAGS], _console()
    ) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().splitlines()[0] == ",".join(RECORD_HEADER)
    records = read_records(first)
    assert len(records) == 2 * 2 * 2
    assert [(r.seed, r.dropout_rate, r.epoch) for r in records] == sorted(
        (r.seed, r.dropout_rate, r.epoch) for r in records
    )
    assert len(read_quantities(quantities_path(first))) == 4


def test_relu_train(tmp_path: Path) -> None:
    """The ReLU sweep runs from flags alone."""
    out = tmp_path / "relu.csv"
    config = tmp_path / "relu.conf"
    config.write_text("task=relu\ninput_dim=3\nteacher_width=2\nn_train=20\nn_test=10\nbatch_size=5\nlr=0.01\n")
    argv = [
        "relu-train",
        "--config",
        str(config),
        "--out",
        str(out),
        *("--seed", "0", "--rate", "0.5", "--width", "4", "--epochs", "1", "--beta-dirs", "8"),
        "--symmetrize",
    ]
    assert main(argv, _console()) == EXIT_OK
    (quantities,) = read_quantities(quantities_path(out))
    assert quantities.task == "relu-sym"


def test_config_errors_exit_one(tmp_path: Path) -> None:
    """Invalid values and unreadable config files exit with 1."""
    assert main(["mc-train", "--rate", "1.5", "--out", str(tmp_path / "x.csv")], _console()) == EXIT_CONFIG
    assert main(["mc-train", "--config", str(tmp_path / "absent.conf")], _console()) == EXIT_CONFIG
    assert main(["relu-train", "--data", "movielens:ratings.dat"], _console()) == EXIT_CONFIG


def test_divergence_exits_three(mc_config: Path, tmp_path: Path) -> None:
    """A diverged run still writes its records and exits with 3."""
    out = tmp_path / "div.csv"
    argv = [
        "mc-train",
        "--config",
        str(mc_config),
        "--out",
        str(out),
        *("--lr", "1e6", "--seed", "0", "--rate", "0", "--width", "3", "--epochs", "3"),
    ]
    assert main(argv, _console()) == EXIT_DIVERGED
    assert read_records(out)


def test_audit_exit_codes() -> None:
    """Audit failures exit with 2; passing audits exit with 0."""
    ok = AuditCheck(name="a", passes=1, total=1, required=1, worst=0.0, description="")
    bad = AuditCheck(name="b", passes=0, total=1, required=1, worst=9.0, description="")
    passing = AuditReport(seed=0, checks=[ok])
    failing = AuditReport(seed=0, checks=[bad])
    with patch("dropout_capacity.cli.run_audit", return_value=passing) as audit:
        assert main(["audit", "--seed", "7"], _console()) == EXIT_OK
    assert audit.call_args.args == (7,)
    assert audit.call_args.kwargs["lambda_perturbation"] == 1.0
    with patch("dropout_capacity.cli.run_audit", return_value=failing):
        assert main(["audit"], _console()) == EXIT_CHECK


def test_audit_forwards_rates_and_perturbation() -> None:
    """User rates replace the audit grid; the hidden flag scales λ."""
    audit = MagicMock(return_value=AuditReport(seed=0))
    with patch("dropout_capacity.cli.run_audit", audit):
        main(["audit", "--rate", "0.3", "--perturb-lambda", "1.01"], _console())
    assert audit.call_args.kwargs["rates"] == (0.3,)
    assert audit.call_args.kwargs["lambda_perturbation"] == 1.01


def test_bounds_report(tmp_path: Path) -> None:
    """The bounds command prints every row, even with violations, and exits 0."""
    path = tmp_path / "q.csv"
    write_quantities(
        [
            BoundQuantities(run_id="good", task="mc", train_loss=0.2, alpha=1.0, n=1000, d2=10, d0=8),
            BoundQuantities(run_id="bad", task="relu", train_loss=0.2, alpha=1.0, n=10, d2=1),
        ],
        path,
    )
    console = _console()
    assert main(["bounds", "--quantities", str(path), "--delta", "0.1"], console) == EXIT_OK
    text = console.export_text()
    assert "completion" in text and "missing beta" in text


def test_bounds_missing_file(tmp_path: Path) -> None:
    """Unreadable quantities exit with 1."""
    assert main(["bounds", "--quantities", str(tmp_path / "absent.csv")], _console()) == EXIT_CONFIG


def test_planted_teacher_flags() -> None:
    """Sample size and input distribution of the planted task are flags."""
    args = build_parser().parse_args(["relu-train", "--n-train", "5000", "--input-dist", "folded-gaussian"])
    config = resolve_config(args, "relu")
    assert config.n_train == 5000
    assert config.input_dist == "folded-gaussian"
