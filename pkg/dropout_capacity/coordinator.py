"""Experiment coordinator: builds one job per (seed, rate, width) and runs them."""
from __future__ import annotations

import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol

from .config import RunConfig
from .const import DATA_MNIST, DATA_MOVIELENS, TASK_MC, TASK_RELU
from .datasets import (
    CompletionTask,
    RatingsData,
    RegressionTask,
    gen_planted_teacher,
    load_binary_pair,
    make_completion_task,
    parse_movielens,
    split,
)
from .exceptions import DivergenceError, DropoutCapacityError
from .numerics import SeededRng, spectral_norm
from .records import BoundQuantities, ExperimentRecord
from .relunet import (
    LabeledSet,
    complexity_measure,
    data_geometry,
    he_two_layer,
    sgd_dropout_train_relu,
    symmetrize,
)
from .sensing import (
    DropoutConfig,
    SgdSchedule,
    clipped_erm_loss,
    he_factor_pair,
    sgd_dropout_train,
)

_LOGGER = logging.getLogger(__name__)

# Child streams of SeededRng(seed)
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_SYMMETRIZE = 3


@dataclass(frozen=True, order=True)
class RunJob:
    """One training run of the sweep."""

    seed: int
    rate: float
    width: int


@dataclass(frozen=True, kw_only=True)
class RunOutcome:
    """Records and final measurements of one run."""

    job: RunJob
    run_id: str
    records: list[ExperimentRecord] = field(default_factory=list)
    quantities: BoundQuantities | None = None
    complexity: float = math.nan
    diverged: bool = False

    @property
    def best_test(self) -> float:
        """Lowest test loss over the epochs."""
        losses = [record.test_loss for record in self.records if math.isfinite(record.test_loss)]
        return min(losses, default=math.nan)

    @property
    def last(self) -> ExperimentRecord | None:
        """Final-epoch record."""
        return self.records[-1] if self.records else None


class Runner(Protocol):
    """Executes one job of a sweep."""

    def run(self, job: RunJob) -> RunOutcome:
        """Run the job to completion."""


class CompletionRunner:
    """Dropout matrix factorization on a synthetic or MovieLens task."""

    def __init__(self, config: RunConfig) -> None:
        """Initialize the runner."""
        self._config = config

    @cached_property
    def _ratings(self) -> RatingsData:
        return parse_movielens(self._config.data.paths[0])

    def task(self, seed: int) -> CompletionTask:
        """Observations for seed; MovieLens data is split per seed."""
        config = self._config
        rng = SeededRng(seed).spawn(STREAM_DATA)
        if config.data.kind == DATA_MOVIELENS:
            train, test = split(self._ratings.sample, config.test_fraction, rng)
            return CompletionTask(train=train, test=test, model=self._ratings.model)
        return make_completion_task(
            config.rows,
            config.cols,
            config.rank,
            config.observed_fraction,
            config.noise_std,
            config.test_fraction,
            rng,
        )

    def run(self, job: RunJob) -> RunOutcome:
        """Train one factorization and measure the completion-bound inputs."""
        config = self._config
        run_id = config.run_id(job.seed, job.rate, job.width)
        root = SeededRng(job.seed)
        task = self.task(job.seed)
        d2, d0 = task.train.shape
        init = he_factor_pair(d2, d0, job.width, root.spawn(STREAM_INIT))
        _LOGGER.info("Starting %s", run_id)
        try:
            factors, records = sgd_dropout_train(
                init,
                task.train,
                DropoutConfig(job.rate),
                SgdSchedule(lr=config.lr, batch_size=config.batch_size, epochs=config.epochs),
                config.mode,
                root.spawn(STREAM_TRAIN),
                test=task.test,
                run_id=run_id,
                seed=job.seed,
            )
        except DivergenceError as err:
            return RunOutcome(job=job, run_id=run_id, records=err.records, diverged=True)

        quantities = BoundQuantities(
            run_id=run_id,
            task=TASK_MC,
            train_loss=clipped_erm_loss(factors, task.train),
            alpha=records[-1].alpha_hat,
            n=task.train.n,
            d2=d2,
            d0=d0,
            min_pq=task.model.min_cell_probability(),
            spectral_norm=spectral_norm(task.ground_truth) if task.ground_truth is not None else None,
        )
        return RunOutcome(job=job, run_id=run_id, records=records, quantities=quantities)


class ReluRunner:
    """Dropout training of a single-output two-layer ReLU network."""

    def __init__(self, config: RunConfig) -> None:
        """Initialize the runner."""
        self._config = config

    @cached_property
    def _mnist(self) -> tuple[LabeledSet, LabeledSet | None]:
        paths = self._config.data.paths
        class_a, class_b = self._config.classes
        train = load_binary_pair(paths[0], paths[1], class_a, class_b)
        test = load_binary_pair(paths[2], paths[3], class_a, class_b) if len(paths) == 4 else None
        return train, test

    def task(self, seed: int) -> RegressionTask:
        """Examples for seed; MNIST without test files is split per seed."""
        config = self._config
        rng = SeededRng(seed).spawn(STREAM_DATA)
        if config.data.kind == DATA_MNIST:
            train, test = self._mnist
            if test is None:
                train, test = split(train, config.test_fraction, rng)
            return RegressionTask(train=train, test=test, noise_std=0.0)
        return gen_planted_teacher(
            config.input_dim,
            config.teacher_width,
            config.n_train,
            config.n_test,
            config.input_dist,
            config.noise_std,
            rng,
        )

    def run(self, job: RunJob) -> RunOutcome:
        """Train one network and measure the capacity-bound inputs."""
        config = self._config
        run_id = config.run_id(job.seed, job.rate, job.width)
        root = SeededRng(job.seed)
        task = self.task(job.seed)
        raw = task.train
        train = symmetrize(raw, root.spawn(STREAM_SYMMETRIZE)) if config.symmetrize else raw
        # ζ² = 1 leaves the second moment, hence the geometry, unchanged
        geometry = data_geometry(raw.inputs)
        init = he_two_layer(raw.d0, job.width, 1, root.spawn(STREAM_INIT))
        _LOGGER.info("Starting %s", run_id)
        try:
            net, records = sgd_dropout_train_relu(
                init,
                train,
                DropoutConfig(job.rate),
                SgdSchedule(lr=config.lr, batch_size=config.batch_size, epochs=config.epochs),
                config.mode,
                root.spawn(STREAM_TRAIN),
                test=task.test,
                run_id=run_id,
                seed=job.seed,
                beta_dirs=config.beta_dirs,
                geometry=geometry,
                symmetrized_from=raw if config.symmetrize else None,
            )
        except DivergenceError as err:
            return RunOutcome(job=job, run_id=run_id, records=err.records, diverged=True)

        last = records[-1]
        quantities = BoundQuantities(
            run_id=run_id,
            task=f"{TASK_RELU}-sym" if config.symmetrize else TASK_RELU,
            train_loss=last.train_loss,
            alpha=last.alpha_hat,
            beta=None if config.symmetrize else last.beta_hat,
            x_mahal=geometry.x_mahalanobis,
            rank_c=geometry.rank_c,
            n=raw.n,
            d2=1,
            d0=raw.d0,
        )
        return RunOutcome(
            job=job,
            run_id=run_id,
            records=records,
            quantities=quantities,
            complexity=complexity_measure(net, train),
        )


class ExperimentCoordinator:
    """Runs every (seed, rate, width) job of a config, optionally in parallel."""

    def __init__(self, config: RunConfig, runner: Runner | None = None) -> None:
        """Initialize the coordinator with the runner for the config's task."""
        self.config = config
        self._runner = runner or self._init_runner()

    def _init_runner(self) -> Runner:
        """Pick the runner for the task."""
        if self.config.task == TASK_MC:
            return CompletionRunner(self.config)
        return ReluRunner(self.config)

    @property
    def jobs(self) -> list[RunJob]:
        """All jobs in (seed, rate, width) order."""
        return sorted(
            RunJob(seed, rate, width)
            for seed in self.config.seeds
            for rate in self.config.rates
            for width in self.config.widths
        )

    def _run_job(self, job: RunJob) -> RunOutcome:
        try:
            return self._runner.run(job)
        except DropoutCapacityError:
            raise
        except Exception as err:
            _LOGGER.error("Run %s failed: %s", job, err)
            raise DropoutCapacityError(f"run {job} failed: {err}") from err

    async def async_run(self) -> list[RunOutcome]:
        """Run all jobs on a pool of config.workers threads.

        Outcomes come back in job order whatever the completion order.
        """
        loop = asyncio.get_running_loop()
        jobs = self.jobs
        _LOGGER.info("Running %d jobs on %d workers", len(jobs), self.config.workers)
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            outcomes = await asyncio.gather(
                *(loop.run_in_executor(pool, self._run_job, job) for job in jobs)
            )
        diverged = [outcome.run_id for outcome in outcomes if outcome.diverged]
        if diverged:
            _LOGGER.warning("%d runs diverged: %s", len(diverged), ", ".join(diverged))
        return sorted(outcomes, key=lambda outcome: outcome.job)

    def run(self) -> list[RunOutcome]:
        """Blocking wrapper around async_run."""
        return asyncio.run(self.async_run())


def merged_records(outcomes: list[RunOutcome]) -> list[ExperimentRecord]:
    """All records in (seed, rate, width, epoch) order."""
    return [record for outcome in sorted(outcomes, key=lambda o: o.job) for record in outcome.records]
