"""Synthetic completion and regression tasks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TypeVar

import numpy as np
from numpy.typing import ArrayLike

from ..const import INPUT_FOLDED, INPUT_GAUSSIAN
from ..exceptions import InvalidArgumentError, RankError, ShapeError
from ..numerics import Matrix, RngLike, as_generator, as_matrix, spectral_norm
from ..relunet import LabeledSet, TwoLayerNet, forward
from ..sensing import MeasurementModel, SensingSample

Splittable = TypeVar("Splittable", SensingSample, LabeledSet)


@dataclass(frozen=True, eq=False)
class CompletionTask:
    """Train/test observations of a matrix under a measurement model."""

    train: SensingSample
    test: SensingSample
    model: MeasurementModel
    ground_truth: Matrix | None = None


@dataclass(frozen=True, eq=False)
class RegressionTask:
    """Train/test examples, optionally with the network that generated them."""

    train: LabeledSet
    test: LabeledSet
    noise_std: float
    teacher: TwoLayerNet | None = None


def gen_low_rank(d2: int, d0: int, rank: int, rng: RngLike, normalize: bool = False) -> Matrix:
    """Return a random d2×d0 matrix of the given rank.

    Factors have standard Gaussian entries scaled by 1/√rank so entries are
    O(1). With normalize the spectral norm is scaled to one.
    """
    if rank < 1 or rank > min(d2, d0):
        raise RankError(f"rank must lie in [1, {min(d2, d0)}], got {rank}")
    gen = as_generator(rng)
    left = gen.standard_normal((d2, rank))
    right = gen.standard_normal((d0, rank))
    m = left @ right.T / math.sqrt(rank)
    if normalize:
        m /= spectral_norm(m)
    return m


def sample_indicator_observations(
    m: ArrayLike,
    model: MeasurementModel,
    n: int,
    rng: RngLike,
    *,
    replace: bool = True,
    noise_std: float = 0.0,
) -> SensingSample:
    """Draw n entries of m, cell (i, k) with probability p(i)q(k).

    Without replacement every cell is observed at most once, which needs
    n ≤ d2·d0.
    """
    matrix = as_matrix(m, "m")
    if not model.is_indicator:
        raise InvalidArgumentError("indicator observations need an indicator model")
    if matrix.shape != (model.d2, model.d0):
        raise ShapeError(f"model is {model.d2}x{model.d0} but matrix is {matrix.shape}")
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    if noise_std < 0:
        raise InvalidArgumentError(f"noise_std must be >= 0, got {noise_std}")
    gen = as_generator(rng)
    if replace:
        rows = gen.choice(model.d2, size=n, p=model.row_probs)
        cols = gen.choice(model.d0, size=n, p=model.col_probs)
    else:
        if n > matrix.size:
            raise InvalidArgumentError(f"cannot draw {n} distinct cells from {matrix.size}")
        cell_probs = np.outer(model.row_probs, model.col_probs).ravel()
        cells = gen.choice(matrix.size, size=n, replace=False, p=cell_probs)
        rows, cols = np.divmod(cells, model.d0)
    y = matrix[rows, cols]
    if noise_std > 0:
        y = y + noise_std * gen.standard_normal(n)
    return SensingSample.indicator(rows, cols, y, matrix.shape)


def split(sample: Splittable, test_fraction: float, rng: RngLike) -> tuple[Splittable, Splittable]:
    """Randomly split into (train, test) with ⌊n·f⌋ test items."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    perm = as_generator(rng).permutation(sample.n)
    n_test = math.floor(sample.n * test_fraction)
    return sample.take(np.sort(perm[n_test:])), sample.take(np.sort(perm[:n_test]))


def make_completion_task(
    d2: int,
    d0: int,
    rank: int,
    observed_fraction: float,
    noise_std: float,
    test_fraction: float,
    rng: RngLike,
    *,
    normalize: bool = False,
) -> CompletionTask:
    """Observe a random rank-r matrix under the uniform indicator model.

    Observations are drawn without replacement, noised and split into
    disjoint train and test sets.
    """
    if not 0.0 < observed_fraction <= 1.0:
        raise InvalidArgumentError(f"observed_fraction must lie in (0, 1], got {observed_fraction}")
    gen = as_generator(rng)
    truth = gen_low_rank(d2, d0, rank, gen, normalize=normalize)
    model = MeasurementModel.uniform(d2, d0)
    observed = sample_indicator_observations(
        truth, model, round(observed_fraction * d2 * d0), gen, replace=False, noise_std=noise_std
    )
    train, test = split(observed, test_fraction, gen)
    return CompletionTask(train=train, test=test, model=model, ground_truth=truth)


def _draw_inputs(gen: np.random.Generator, d0: int, n: int, input_dist: str) -> Matrix:
    x = gen.standard_normal((d0, n))
    if input_dist == INPUT_FOLDED:
        return np.abs(x)
    if input_dist != INPUT_GAUSSIAN:
        raise InvalidArgumentError(f"unknown input distribution {input_dist!r}")
    return x


def gen_planted_teacher(
    d0: int,
    d1: int,
    n_train: int,
    n_test: int,
    input_dist: str,
    noise_std: float,
    rng: RngLike,
    *,
    teacher: TwoLayerNet | None = None,
) -> RegressionTask:
    """Label random inputs with a random single-output ReLU teacher.

    The teacher has V ~ N(0, 1/d0) and u ~ N(0, 1/d1) unless one is given.
    Targets are clip(f*(x) + noise, [-1, 1]).
    """
    if min(d0, d1, n_train, n_test) < 1:
        raise InvalidArgumentError("dimensions and sample sizes must be >= 1")
    if noise_std < 0:
        raise InvalidArgumentError(f"noise_std must be >= 0, got {noise_std}")
    gen = as_generator(rng)
    if teacher is None:
        teacher = TwoLayerNet(
            gen.standard_normal((1, d1)) / math.sqrt(d1),
            gen.standard_normal((d0, d1)) / math.sqrt(d0),
        )
    elif teacher.d0 != d0 or teacher.d2 != 1:
        raise ShapeError(f"teacher must map {d0} inputs to one output")

    def labeled(n: int) -> LabeledSet:
        x = _draw_inputs(gen, d0, n, input_dist)
        y = forward(teacher, x)[0] + noise_std * gen.standard_normal(n)
        return LabeledSet(x, np.clip(y, -1.0, 1.0))

    train = labeled(n_train)
    return RegressionTask(train=train, test=labeled(n_test), noise_std=noise_std, teacher=teacher)
