"""Command line: dropcap {mc-train,relu-train,audit,bounds}."""
from __future__ import annotations

import argparse
import logging
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.logging import RichHandler

from .config import RunConfig, build_config, load_config_file
from .const import (
    CONF_BATCH,
    CONF_BETA_DIRS,
    CONF_DATA,
    CONF_DELTA,
    CONF_EPOCHS,
    CONF_INPUT_DIST,
    CONF_K_CONST,
    CONF_LR,
    CONF_MODE,
    CONF_N_TRAIN,
    CONF_OUT,
    CONF_RATES,
    CONF_SEEDS,
    CONF_SYMMETRIZE,
    CONF_TASK,
    CONF_WIDTHS,
    CONF_WORKERS,
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_OK,
    INPUT_FOLDED,
    INPUT_GAUSSIAN,
    MODE_MASK,
    MODE_PENALTY,
    TASK_MC,
    TASK_RELU,
)
from .coordinator import ExperimentCoordinator, merged_records
from .datasets import read_quantities, write_quantities, write_records
from .diagnostics import (
    AUDIT_RATES,
    evaluate_bounds,
    render_audit,
    render_bounds,
    render_summary,
    run_audit,
)
from .exceptions import CheckFailure, ConfigError, DivergenceError, DropoutCapacityError

_LOGGER = logging.getLogger(__name__)


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=Path, help="key=value config file")
    parser.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    parser.add_argument("--rate", type=float, action="append", help="dropout rate (repeatable)")
    parser.add_argument("--width", type=int, action="append", help="hidden width d1 (repeatable)")
    parser.add_argument("--lr", type=float, help="learning rate")
    parser.add_argument("--batch", type=int, help="minibatch size")
    parser.add_argument("--epochs", type=int, help="number of epochs")
    parser.add_argument("--mode", choices=[MODE_MASK, MODE_PENALTY], help="dropout training mode")
    parser.add_argument("--symmetrize", action="store_true", default=None, help="flip input signs before training")
    parser.add_argument("--data", help="synthetic | movielens:PATH | mnist:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS]")
    parser.add_argument("--out", help="metrics CSV path")
    parser.add_argument("--delta", type=float, help="bound confidence parameter")
    parser.add_argument("--workers", type=int, help="concurrent runs")
    parser.add_argument("--beta-dirs", type=int, help="random directions probed for beta")
    parser.add_argument("--n-train", type=int, help="planted-teacher training examples")
    parser.add_argument("--input-dist", choices=[INPUT_GAUSSIAN, INPUT_FOLDED], help="planted-teacher inputs")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def build_parser() -> argparse.ArgumentParser:
    """Return the top-level parser."""
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="dropcap", description="Dropout capacity experiments")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("mc-train", "dropout matrix factorization sweep"),
        ("relu-train", "dropout two-layer ReLU sweep"),
    ):
        commands.add_parser(name, parents=[common], help=help_text)
    audit = commands.add_parser("audit", parents=[common], help="oracle cross-checks")
    audit.add_argument("--perturb-lambda", type=float, default=1.0, help=argparse.SUPPRESS)
    bounds = commands.add_parser("bounds", parents=[common], help="evaluate generalization bounds")
    bounds.add_argument("--quantities", type=Path, required=True, help="measured-quantities CSV")
    bounds.add_argument("--k-const", type=float, help="constant of the optimistic rate")
    return parser


def _overrides(args: argparse.Namespace, task: str | None) -> dict[str, Any]:
    return {
        CONF_TASK: task,
        CONF_SEEDS: tuple(args.seed) if args.seed else None,
        CONF_RATES: tuple(args.rate) if args.rate else None,
        CONF_WIDTHS: tuple(args.width) if args.width else None,
        CONF_LR: args.lr,
        CONF_BATCH: args.batch,
        CONF_EPOCHS: args.epochs,
        CONF_MODE: args.mode,
        CONF_SYMMETRIZE: args.symmetrize,
        CONF_DATA: args.data,
        CONF_OUT: args.out,
        CONF_DELTA: args.delta,
        CONF_WORKERS: args.workers,
        CONF_BETA_DIRS: args.beta_dirs,
        CONF_N_TRAIN: args.n_train,
        CONF_INPUT_DIST: args.input_dist,
        CONF_K_CONST: getattr(args, "k_const", None),
    }


def _file_values(args: argparse.Namespace) -> dict[str, str]:
    return load_config_file(args.config) if args.config else {}


def resolve_config(args: argparse.Namespace, task: str | None = None) -> RunConfig:
    """Build the run config with CLI flags over the config file over defaults."""
    values = _file_values(args)
    if task is None:
        task = values.get(CONF_TASK, TASK_MC)
    return build_config(values, _overrides(args, task))


def quantities_path(out: str | Path) -> Path:
    """Return <out stem>.quantities.csv next to the metrics file."""
    out = Path(out)
    return out.with_name(f"{out.stem}.quantities.csv")


def _train(args: argparse.Namespace, task: str, console: Console) -> int:
    config = resolve_config(args, task)
    outcomes = ExperimentCoordinator(config).run()
    write_records(merged_records(outcomes), config.out)
    write_quantities(
        [outcome.quantities for outcome in outcomes if outcome.quantities is not None],
        quantities_path(config.out),
    )
    _LOGGER.info("Wrote %s", config.out)
    render_summary(outcomes, console)
    diverged = [outcome.run_id for outcome in outcomes if outcome.diverged]
    if diverged:
        raise DivergenceError(f"{len(diverged)} of {len(outcomes)} runs diverged")
    return EXIT_OK


def cmd_mc_train(args: argparse.Namespace, console: Console) -> int:
    """Run the matrix-completion sweep."""
    return _train(args, TASK_MC, console)


def cmd_relu_train(args: argparse.Namespace, console: Console) -> int:
    """Run the two-layer ReLU sweep."""
    return _train(args, TASK_RELU, console)


def cmd_audit(args: argparse.Namespace, console: Console) -> int:
    """Run the oracle cross-checks; fail when any check misses its tolerance."""
    values = _file_values(args)
    config = resolve_config(args)
    rates = config.rates if (args.rate or CONF_RATES in values) else AUDIT_RATES
    report = run_audit(config.seeds[0], rates=rates, lambda_perturbation=args.perturb_lambda)
    render_audit(report, console)
    if not report.passed:
        raise CheckFailure(f"audit failed: {', '.join(report.failures)}")
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace, console: Console) -> int:
    """Evaluate the bound formulas from a measured-quantities CSV."""
    config = resolve_config(args)
    rows = evaluate_bounds(read_quantities(args.quantities), config.delta, config.k_const)
    render_bounds(rows, console)
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Console], int]] = {
    "mc-train": cmd_mc_train,
    "relu-train": cmd_relu_train,
    "audit": cmd_audit,
    "bounds": cmd_bounds,
}


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def main(argv: Sequence[str] | None = None, console: Console | None = None) -> int:
    """Entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    console = console or Console()
    try:
        return COMMANDS[args.command](args, console)
    except ConfigError as err:
        _LOGGER.error("Configuration error: %s", err)
        return EXIT_CONFIG
    except CheckFailure as err:
        _LOGGER.error("%s", err)
        return EXIT_CHECK
    except DivergenceError as err:
        _LOGGER.error("%s", err)
        return EXIT_DIVERGED
    except DropoutCapacityError as err:
        _LOGGER.error("%s", err)
        return EXIT_CONFIG
