"""Matrix sensing and completion trained with dropout on the factor columns.

A factored model UVᵀ is observed through linear measurements yⱼ = ⟨M, Aⱼ⟩.
Dropout multiplies the factor columns by a random diagonal B with
Bᵢᵢ ~ Bernoulli(1-p)/(1-p); averaging over B turns the dropout objective into
the empirical risk plus λ·R̂(U, V) with λ = p/(1-p).
"""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11

    class StrEnum(str, Enum):
        """Backport of enum.StrEnum: members are str and str() yields the value."""

        __str__ = str.__str__
        __format__ = str.__format__

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import (
    DEFAULT_K_CONST,
    DIVERGENCE_LIMIT,
    MAX_EXACT_MASK_WIDTH,
    MC_CHUNK,
    MODE_MASK,
    MODE_PENALTY,
    MODEL_GAUSSIAN,
    MODEL_INDICATOR,
    SIMPLEX_TOL,
)
from .exceptions import DivergenceError, InvalidArgumentError, RankError, ShapeError
from .numerics import (
    Matrix,
    RngLike,
    Vector,
    as_generator,
    as_matrix,
    as_seeded,
    as_vector,
    equal_diagonal_rotation,
    frozen,
    nuclear_norm,
    numerical_rank,
    pseudo_inverse,
    svd,
)
from .records import ExperimentRecord

_LOGGER = logging.getLogger(__name__)


class TrainMode(StrEnum):
    """How dropout enters a training step."""

    SAMPLED_MASK = MODE_MASK
    EXPLICIT_PENALTY = MODE_PENALTY


@dataclass(frozen=True)
class DropoutConfig:
    """Dropout rate p with λ = p/(1-p) and survivor scale 1/(1-p)."""

    rate: float

    def __post_init__(self) -> None:
        """Validate the rate."""
        if not (0.0 <= self.rate < 1.0) or math.isnan(self.rate):
            raise InvalidArgumentError(f"dropout rate must lie in [0, 1), got {self.rate}")

    @property
    def lam(self) -> float:
        """Regularization parameter λ = p/(1-p)."""
        return self.rate / (1.0 - self.rate)

    @property
    def keep_scale(self) -> float:
        """Scale 1/(1-p) applied to surviving columns."""
        return 1.0 / (1.0 - self.rate)

    def masks(self, gen: np.random.Generator, shape: int | tuple[int, ...]) -> NDArray[np.float64]:
        """Draw scaled Bernoulli masks with mean one."""
        if self.rate == 0.0:
            return np.ones(shape)
        return (gen.random(shape) >= self.rate) * self.keep_scale


@dataclass(frozen=True, kw_only=True)
class SgdSchedule:
    """Constant learning-rate minibatch SGD settings."""

    lr: float
    batch_size: int
    epochs: int

    def __post_init__(self) -> None:
        """Validate the schedule."""
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")

    def steps_per_epoch(self, n: int) -> int:
        """Return ⌈n / batch_size⌉."""
        return max(1, math.ceil(n / self.batch_size))


@dataclass(frozen=True, eq=False)
class FactorPair:
    """Factored matrix model UVᵀ with U of shape d2×d1 and V of shape d0×d1."""

    u: Matrix
    v: Matrix

    def __post_init__(self) -> None:
        """Validate and freeze the factors."""
        u = as_matrix(self.u, "u")
        v = as_matrix(self.v, "v")
        if u.shape[1] != v.shape[1] or u.shape[1] < 1:
            raise ShapeError(f"factor widths differ or are empty: {u.shape} vs {v.shape}")
        object.__setattr__(self, "u", frozen(u))
        object.__setattr__(self, "v", frozen(v))

    @property
    def width(self) -> int:
        """Inner dimension d1."""
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        """Shape (d2, d0) of the product."""
        return self.u.shape[0], self.v.shape[0]

    def product(self) -> Matrix:
        """Return UVᵀ."""
        return self.u @ self.v.T


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Gaussian or indicator sensing distribution over d2×d0 matrices."""

    kind: str
    d2: int
    d0: int
    row_probs: Vector | None = None
    col_probs: Vector | None = None

    def __post_init__(self) -> None:
        """Validate the probability vectors."""
        if self.d2 < 1 or self.d0 < 1:
            raise ShapeError(f"model dimensions must be positive, got {self.d2}x{self.d0}")
        if self.kind == MODEL_GAUSSIAN:
            return
        if self.kind != MODEL_INDICATOR:
            raise InvalidArgumentError(f"unknown measurement model {self.kind!r}")
        for name, probs, size in (
            ("row_probs", self.row_probs, self.d2),
            ("col_probs", self.col_probs, self.d0),
        ):
            if probs is None:
                raise InvalidArgumentError(f"indicator model needs {name}")
            vec = as_vector(probs, name)
            if vec.size != size:
                raise ShapeError(f"{name} must have length {size}, got {vec.size}")
            if np.any(vec < 0) or abs(vec.sum() - 1.0) > SIMPLEX_TOL:
                raise InvalidArgumentError(f"{name} is not a probability vector")
            object.__setattr__(self, name, frozen(vec))

    @classmethod
    def gaussian(cls, d2: int, d0: int) -> MeasurementModel:
        """Standard Gaussian measurement matrices."""
        return cls(MODEL_GAUSSIAN, d2, d0)

    @classmethod
    def indicator(cls, row_probs: ArrayLike, col_probs: ArrayLike) -> MeasurementModel:
        """Single-entry measurements drawn with probability p(i)q(k)."""
        rows = np.asarray(row_probs, dtype=np.float64)
        cols = np.asarray(col_probs, dtype=np.float64)
        return cls(MODEL_INDICATOR, rows.size, cols.size, rows, cols)

    @classmethod
    def uniform(cls, d2: int, d0: int) -> MeasurementModel:
        """Indicator model with uniform row and column probabilities."""
        return cls.indicator(np.full(d2, 1.0 / d2), np.full(d0, 1.0 / d0))

    @property
    def is_indicator(self) -> bool:
        """Return True for the indicator model."""
        return self.kind == MODEL_INDICATOR

    @property
    def row_weights(self) -> Vector:
        """Row probabilities, or ones for Gaussian measurements."""
        return self.row_probs if self.row_probs is not None else np.ones(self.d2)

    @property
    def col_weights(self) -> Vector:
        """Column probabilities, or ones for Gaussian measurements."""
        return self.col_probs if self.col_probs is not None else np.ones(self.d0)

    def min_cell_probability(self) -> float:
        """Return min p(i)q(k)."""
        return float(self.row_weights.min() * self.col_weights.min())


@dataclass(frozen=True, eq=False)
class SensingSample:
    """Measurements of a d2×d0 matrix.

    Indicator measurements are stored as (row, col, y) triples; dense
    measurements carry the full stack of n matrices.
    """

    shape: tuple[int, int]
    y: Vector
    rows: NDArray[np.intp] | None = None
    cols: NDArray[np.intp] | None = None
    dense: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        """Validate the measurements."""
        y = as_vector(self.y, "y")
        object.__setattr__(self, "y", frozen(y))
        d2, d0 = self.shape
        if self.dense is not None:
            stack = np.asarray(self.dense, dtype=np.float64)
            if stack.shape != (y.size, d2, d0):
                raise ShapeError(f"dense measurements must be {(y.size, d2, d0)}, got {stack.shape}")
            if not np.all(np.isfinite(stack)):
                raise ShapeError("dense measurements contain non-finite entries")
            object.__setattr__(self, "dense", frozen(stack))
            return
        if self.rows is None or self.cols is None:
            raise ShapeError("indicator sample needs rows and cols")
        rows = np.asarray(self.rows, dtype=np.intp)
        cols = np.asarray(self.cols, dtype=np.intp)
        if rows.shape != y.shape or cols.shape != y.shape:
            raise ShapeError("rows, cols and y must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= d2 or cols.min() < 0 or cols.max() >= d0):
            raise ShapeError(f"indicator index outside {d2}x{d0}")
        object.__setattr__(self, "rows", frozen(rows))
        object.__setattr__(self, "cols", frozen(cols))

    @classmethod
    def indicator(
        cls, rows: ArrayLike, cols: ArrayLike, y: ArrayLike, shape: tuple[int, int]
    ) -> SensingSample:
        """Build an indicator sample from (row, col, y) triples."""
        return cls(shape=shape, y=np.asarray(y, dtype=np.float64), rows=rows, cols=cols)

    @classmethod
    def from_dense(cls, a: ArrayLike, y: ArrayLike) -> SensingSample:
        """Build a sample from a stack of n measurement matrices."""
        stack = np.asarray(a, dtype=np.float64)
        if stack.ndim != 3:
            raise ShapeError(f"dense measurements must be n×d2×d0, got {stack.shape}")
        return cls(shape=(stack.shape[1], stack.shape[2]), y=np.asarray(y, dtype=np.float64), dense=stack)

    @property
    def n(self) -> int:
        """Number of measurements."""
        return self.y.size

    @property
    def is_indicator(self) -> bool:
        """Return True when stored as index triples."""
        return self.dense is None

    def take(self, idx: ArrayLike) -> SensingSample:
        """Return the measurements at idx (repeats allowed)."""
        index = np.asarray(idx, dtype=np.intp)
        if self.dense is not None:
            return SensingSample(shape=self.shape, y=self.y[index], dense=self.dense[index])
        return SensingSample(
            shape=self.shape, y=self.y[index], rows=self.rows[index], cols=self.cols[index]
        )


def _check_conform(u: Matrix, v: Matrix, s: SensingSample) -> None:
    if (u.shape[0], v.shape[0]) != s.shape:
        raise ShapeError(f"factors give {(u.shape[0], v.shape[0])} but sample is {s.shape}")
    if s.n < 1:
        raise ShapeError("sample has no measurements")


def _terms(u: Matrix, v: Matrix, s: SensingSample) -> Matrix:
    """Per-measurement, per-column terms uᵢᵀAⱼvᵢ as an n×d1 array."""
    if s.dense is None:
        return u[s.rows] * v[s.cols]
    return np.einsum("jai,ai->ji", s.dense @ v, u)


def factor_terms(f: FactorPair, s: SensingSample) -> Matrix:
    """Return the n×d1 array of uᵢᵀAⱼvᵢ."""
    _check_conform(f.u, f.v, s)
    return _terms(f.u, f.v, s)


def predictions(f: FactorPair, s: SensingSample) -> Vector:
    """Return ⟨UVᵀ, Aⱼ⟩ for every measurement."""
    return factor_terms(f, s).sum(axis=1)


def erm_loss(f: FactorPair, s: SensingSample) -> float:
    """Mean squared residual of UVᵀ on the sample."""
    return float(np.mean((s.y - predictions(f, s)) ** 2))


def explicit_regularizer(f: FactorPair, s: SensingSample) -> float:
    """Return R̂(U, V) = Σᵢ Êⱼ(uᵢᵀAⱼvᵢ)².

    Indicator measurements use (uᵢᵀ e_a e_bᵀ vᵢ)² = U(a,i)²·V(b,i)².
    """
    return float(np.mean(np.sum(factor_terms(f, s) ** 2, axis=1)))


def dropout_objective(f: FactorPair, s: SensingSample, d: DropoutConfig) -> float:
    """Closed-form dropout objective L̂ + λ·R̂."""
    return erm_loss(f, s) + d.lam * explicit_regularizer(f, s)


def _mc_chunk(n: int) -> int:
    return max(1, min(MC_CHUNK, 2_000_000 // max(n, 1)))


def monte_carlo_mean(values: list[NDArray[np.float64]]) -> tuple[float, float]:
    """Return (mean, standard error) of concatenated per-trial values."""
    draws = np.concatenate(values)
    if draws.size < 2:
        return float(draws.mean()), math.inf
    return float(draws.mean()), float(draws.std(ddof=1) / math.sqrt(draws.size))


def dropout_objective_mc(
    f: FactorPair, s: SensingSample, d: DropoutConfig, trials: int, rng: RngLike
) -> tuple[float, float]:
    """Monte-Carlo estimate of Êⱼ E_B (yⱼ − ⟨UBVᵀ, Aⱼ⟩)².

    Trials are drawn in fixed-size chunks, chunk k from the child stream k,
    so the estimate does not depend on how chunks are scheduled.

    Returns:
        Tuple of (mean, standard error).
    """
    if trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {trials}")
    terms = factor_terms(f, s)
    if d.rate == 0.0:
        return erm_loss(f, s), 0.0

    seeded = as_seeded(rng)
    chunk = _mc_chunk(s.n)
    values = []
    for index, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        masks = d.masks(seeded.spawn(index).generator(), (size, terms.shape[1]))
        values.append(np.mean((s.y - masks @ terms.T) ** 2, axis=1))
    return monte_carlo_mean(values)


def exact_mask_distribution(d: DropoutConfig, width: int) -> tuple[Matrix, Vector]:
    """Enumerate all 2^width scaled masks with their probabilities."""
    if width > MAX_EXACT_MASK_WIDTH:
        raise InvalidArgumentError(f"exact enumeration limited to width {MAX_EXACT_MASK_WIDTH}")
    bits = (np.arange(2**width)[:, None] >> np.arange(width)) & 1
    kept = bits.sum(axis=1)
    probs = (1.0 - d.rate) ** kept * d.rate ** (width - kept)
    return bits * d.keep_scale, probs


def dropout_objective_exact(f: FactorPair, s: SensingSample, d: DropoutConfig) -> float:
    """Exact dropout objective by enumerating every mask."""
    terms = factor_terms(f, s)
    masks, probs = exact_mask_distribution(d, terms.shape[1])
    values = np.mean((s.y - masks @ terms.T) ** 2, axis=1)
    return float(probs @ values)


def expected_regularizer(f: FactorPair, model: MeasurementModel) -> float:
    """Return R(U, V) = Σᵢ‖diag(√p)uᵢ‖²·‖diag(√q)vᵢ‖² under the model."""
    if f.shape != (model.d2, model.d0):
        raise ShapeError(f"factors give {f.shape} but model is {(model.d2, model.d0)}")
    row_mass = model.row_weights @ f.u**2
    col_mass = model.col_weights @ f.v**2
    return float(row_mass @ col_mass)


def _check_width(m: Matrix, d1: int) -> None:
    if d1 < 1:
        raise InvalidArgumentError(f"width must be >= 1, got {d1}")
    rank = numerical_rank(m)
    if d1 < rank:
        raise RankError(f"width {d1} cannot represent a rank-{rank} matrix")


def _weighted(m: Matrix, model: MeasurementModel) -> Matrix:
    if m.shape != (model.d2, model.d0):
        raise ShapeError(f"matrix is {m.shape} but model is {(model.d2, model.d0)}")
    return np.sqrt(model.row_weights)[:, None] * m * np.sqrt(model.col_weights)[None, :]


def induced_regularizer_gaussian(m: ArrayLike, d1: int) -> float:
    """Return Θ(M) = ‖M‖_*²/d1."""
    mat = as_matrix(m)
    _check_width(mat, d1)
    return nuclear_norm(mat) ** 2 / d1


def induced_regularizer_weighted(m: ArrayLike, model: MeasurementModel, d1: int) -> float:
    """Return Θ(M) = ‖diag(√p)·M·diag(√q)‖_*²/d1."""
    if not model.is_indicator:
        raise InvalidArgumentError("weighted induced regularizer needs an indicator model")
    mat = as_matrix(m)
    _check_width(mat, d1)
    return nuclear_norm(_weighted(mat, model)) ** 2 / d1


def induced_regularizer(m: ArrayLike, model: MeasurementModel, d1: int) -> float:
    """Return Θ(M) for either measurement model."""
    if model.is_indicator:
        return induced_regularizer_weighted(m, model, d1)
    return induced_regularizer_gaussian(m, d1)


def equalized_minimizer(m: ArrayLike, model: MeasurementModel, d1: int) -> FactorPair:
    """Return a width-d1 factorization of M attaining Θ(M).

    The weighted matrix diag(√p)·M·diag(√q) = AΣBᵀ is split as
    (AΣ^½Q)(BΣ^½Q)ᵀ with Q equalizing the diagonal of QᵀΣQ, then the
    weights are divided back out.
    """
    mat = as_matrix(m)
    _check_width(mat, d1)
    p, q = model.row_weights, model.col_weights
    if np.any(p <= 0) or np.any(q <= 0):
        raise InvalidArgumentError("equalized minimizer needs every row and column probability > 0")

    dec = svd(_weighted(mat, model))
    kept = min(dec.singular_values.size, d1)
    sigma = np.zeros(d1)
    sigma[:kept] = dec.singular_values[:kept]
    left = np.zeros((model.d2, d1))
    right = np.zeros((model.d0, d1))
    left[:, :kept] = dec.left[:, :kept]
    right[:, :kept] = dec.right[:, :kept]

    rotation = equal_diagonal_rotation(sigma)
    root = np.sqrt(sigma)
    u = (left * root) @ rotation / np.sqrt(p)[:, None]
    v = (right * root) @ rotation / np.sqrt(q)[:, None]
    return FactorPair(u, v)


def _reproject(u: Matrix, m: Matrix) -> Matrix:
    """Least-squares V with UVᵀ closest to M."""
    return (pseudo_inverse(u) @ m).T


def minimize_induced_regularizer(
    m: ArrayLike,
    model: MeasurementModel,
    d1: int,
    rng: RngLike,
    *,
    steps: int = 10_000,
    lr: float | None = None,
    reproject_every: int = 100,
    noise: float = 0.01,
) -> FactorPair:
    """Minimize R(U, V) over factorizations of M by projected gradient descent.

    Starts from the equalized factorization perturbed by relative noise,
    decays the step by 0.99 every reproject_every steps and restores
    UVᵀ = M by a least-squares solve for V at the same cadence and at the end.
    """
    mat = as_matrix(m)
    gen = as_generator(rng)
    start = equalized_minimizer(mat, model, d1)
    u = start.u * (1.0 + noise * gen.standard_normal(start.u.shape))
    v = _reproject(u, mat)
    p, q = model.row_weights, model.col_weights

    if lr is None:
        row_mass = p @ u**2
        col_mass = q @ v**2
        curvature = 2.0 * (p.max() * col_mass.max() + q.max() * row_mass.max())
        lr = 0.1 / max(curvature, 1e-12)

    step = lr
    for index in range(1, steps + 1):
        row_mass = p @ u**2
        col_mass = q @ v**2
        grad_u = 2.0 * p[:, None] * u * col_mass[None, :]
        grad_v = 2.0 * q[:, None] * v * row_mass[None, :]
        u = u - step * grad_u
        v = v - step * grad_v
        if index % reproject_every == 0:
            v = _reproject(u, mat)
            step *= 0.99

    return FactorPair(u, _reproject(u, mat))


def clip_unit(m: ArrayLike) -> NDArray[np.float64]:
    """Threshold entries to [-1, 1]."""
    return np.clip(np.asarray(m, dtype=np.float64), -1.0, 1.0)


def clipped_erm_loss(f: FactorPair, s: SensingSample) -> float:
    """Mean squared residual of the clipped predictor g(UVᵀ)."""
    return float(np.mean((s.y - clip_unit(predictions(f, s))) ** 2))


def vectorized_regularizer(m: ArrayLike, second_moment: ArrayLike, d: DropoutConfig) -> float:
    """Return λ·Σₖ diag(C)ₖ·vec(M)ₖ², vec stacking columns."""
    mat = as_matrix(m)
    moment = as_matrix(second_moment, "second_moment")
    size = mat.size
    if moment.shape != (size, size):
        raise ShapeError(f"second moment must be {size}x{size}, got {moment.shape}")
    vec = mat.ravel(order="F")
    return d.lam * float(np.diag(moment) @ vec**2)


def _validate_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")


def gen_bound_mc(train_loss: float, alpha: float, d2: int, n: int, delta: float) -> float:
    """Generalization bound for the clipped dropout completion predictor.

    L̂ + 8·sqrt((2α·d2·log d2 + ¼·log(2/δ))/n).
    """
    _validate_delta(delta)
    if n < 1 or d2 < 2 or alpha < 0:
        raise InvalidArgumentError(f"need n >= 1, d2 >= 2, alpha >= 0; got {n}, {d2}, {alpha}")
    return train_loss + 8.0 * math.sqrt((2.0 * alpha * d2 * math.log(d2) + 0.25 * math.log(2.0 / delta)) / n)


def gen_bound_optimistic(
    alpha: float, d2: int, n: int, delta: float, k_const: float = DEFAULT_K_CONST
) -> float:
    """Optimistic O(1/n) rate (2K·log(n)³·α·d2·log d2 + 4K·log(1/δ))/n."""
    _validate_delta(delta)
    if n < 1 or d2 < 2 or alpha < 0 or k_const <= 0:
        raise InvalidArgumentError(f"need n >= 1, d2 >= 2, alpha >= 0, K > 0; got {n}, {d2}, {alpha}, {k_const}")
    return (
        2.0 * k_const * math.log(n) ** 3 * alpha * d2 * math.log(d2)
        + 4.0 * k_const * math.log(1.0 / delta)
    ) / n


def sensing_bound_preconditions(
    d2: int,
    d0: int | None,
    n: int,
    min_pq: float | None = None,
    spectral_norm: float | None = None,
) -> list[str]:
    """Return the names of violated completion-bound assumptions."""
    violated = []
    if d0 is not None and d2 < d0:
        violated.append("d2<d0")
    if spectral_norm is not None and spectral_norm > 1.0 + 1e-12:
        violated.append("spectral_norm>1")
    if min_pq is not None and d0 is not None and d2 >= 2:
        if min_pq < math.log(d2) / (n * math.sqrt(d2 * d0)):
            violated.append("min_pq<log(d2)/(n*sqrt(d2*d0))")
    return violated


@dataclass(frozen=True)
class ConcentrationRow:
    """Deviation of the empirical regularizer at one sample size."""

    n: int
    mean_deviation: float
    max_deviation: float
    gamma_sq: float

    @property
    def scaled(self) -> float:
        """Mean deviation times √n."""
        return self.mean_deviation * math.sqrt(self.n)


def concentration_audit(
    f: FactorPair,
    model: MeasurementModel,
    n_grid: Sequence[int],
    resamples: int,
    rng: RngLike,
) -> list[ConcentrationRow]:
    """Measure |R̂ − R| for indicator samples of each size in n_grid."""
    if not model.is_indicator:
        raise InvalidArgumentError("concentration audit needs an indicator model")
    if resamples < 1:
        raise InvalidArgumentError(f"resamples must be >= 1, got {resamples}")
    if f.shape != (model.d2, model.d0):
        raise ShapeError(f"factors give {f.shape} but model is {(model.d2, model.d0)}")

    cell = (f.u**2) @ (f.v**2).T
    exact = float(model.row_weights @ cell @ model.col_weights)
    gamma = float(np.sqrt((f.u**2).sum(axis=1)).max() * np.abs(f.v).max())
    seeded = as_seeded(rng)

    table = []
    for grid_index, n in enumerate(n_grid):
        deviations = np.empty(resamples)
        for trial in range(resamples):
            gen = seeded.spawn(grid_index).spawn(trial).generator()
            rows = gen.choice(model.d2, size=n, p=model.row_weights)
            cols = gen.choice(model.d0, size=n, p=model.col_weights)
            deviations[trial] = abs(cell[rows, cols].mean() - exact)
        _LOGGER.debug("n=%d mean deviation %.3e", n, deviations.mean())
        table.append(
            ConcentrationRow(
                n=int(n),
                mean_deviation=float(deviations.mean()),
                max_deviation=float(deviations.max()),
                gamma_sq=gamma**2,
            )
        )
    return table


def he_factor_pair(d2: int, d0: int, d1: int, rng: RngLike) -> FactorPair:
    """He-initialized factors: V has fan-in d0, U has fan-in d1."""
    gen = as_generator(rng)
    u = gen.standard_normal((d2, d1)) * math.sqrt(2.0 / d1)
    v = gen.standard_normal((d0, d1)) * math.sqrt(2.0 / d0)
    return FactorPair(u, v)


def _contract(u: Matrix, v: Matrix, s: SensingSample, weights: Matrix) -> tuple[Matrix, Matrix]:
    """Return Σⱼ wⱼᵢ·Aⱼvᵢ and Σⱼ wⱼᵢ·Aⱼᵀuᵢ column by column."""
    grad_u = np.zeros_like(u)
    grad_v = np.zeros_like(v)
    if s.dense is None:
        np.add.at(grad_u, s.rows, weights * v[s.cols])
        np.add.at(grad_v, s.cols, weights * u[s.rows])
        return grad_u, grad_v
    grad_u = np.einsum("ji,jai->ai", weights, s.dense @ v)
    grad_v = np.einsum("ji,jbi->bi", weights, np.einsum("jab,ai->jbi", s.dense, u))
    return grad_u, grad_v


def _penalty_gradient(
    u: Matrix, v: Matrix, s: SensingSample, lam: float
) -> tuple[Matrix, Matrix, Matrix]:
    terms = _terms(u, v, s)
    resid = terms.sum(axis=1) - s.y
    weights = (2.0 / s.n) * (resid[:, None] + lam * terms)
    grad_u, grad_v = _contract(u, v, s, weights)
    return grad_u, grad_v, terms


def _mask_gradient(
    u: Matrix, v: Matrix, s: SensingSample, mask: Vector
) -> tuple[Matrix, Matrix]:
    terms = _terms(u, v, s)
    resid = terms @ mask - s.y
    weights = (2.0 / s.n) * resid[:, None] * mask[None, :]
    return _contract(u, v, s, weights)


def explicit_penalty_gradient(
    f: FactorPair, s: SensingSample, d: DropoutConfig
) -> tuple[Matrix, Matrix]:
    """Gradient of L̂ + λ·R̂ with respect to (U, V)."""
    _check_conform(f.u, f.v, s)
    grad_u, grad_v, _ = _penalty_gradient(f.u, f.v, s, d.lam)
    return grad_u, grad_v


def sampled_mask_gradient(
    f: FactorPair, s: SensingSample, mask: ArrayLike
) -> tuple[Matrix, Matrix]:
    """Gradient of the minibatch loss with the factor columns scaled by mask."""
    _check_conform(f.u, f.v, s)
    scale = as_vector(mask, "mask")
    if scale.size != f.width:
        raise ShapeError(f"mask must have length {f.width}, got {scale.size}")
    return _mask_gradient(f.u, f.v, s, scale)


def _rmse(u: Matrix, v: Matrix, s: SensingSample) -> float:
    return math.sqrt(float(np.mean((_terms(u, v, s).sum(axis=1) - s.y) ** 2)))


def sgd_dropout_train(
    init: FactorPair,
    train: SensingSample,
    d: DropoutConfig,
    hp: SgdSchedule,
    mode: TrainMode | str,
    rng: RngLike,
    *,
    test: SensingSample | None = None,
    run_id: str = "",
    seed: int = 0,
) -> tuple[FactorPair, list[ExperimentRecord]]:
    """Train UVᵀ with dropout by minibatch SGD.

    Minibatches are drawn with replacement, ⌈n/batch⌉ steps per epoch. In
    sampled-mask mode each step scales the factor columns by one fresh mask;
    in explicit-penalty mode it descends L̂ + λ·R̂ on the minibatch.

    Returns:
        The trained factors and one record per epoch with train/test RMSE.

    Raises:
        DivergenceError: Train RMSE went non-finite or above the limit; the
            error carries the records so far plus a diagnostic record.
    """
    mode = TrainMode(mode)
    _check_conform(init.u, init.v, train)
    if test is not None:
        _check_conform(init.u, init.v, test)
    gen = as_generator(rng)
    u = np.array(init.u)
    v = np.array(init.v)
    width = init.width
    steps = hp.steps_per_epoch(train.n)
    records: list[ExperimentRecord] = []

    for epoch in range(1, hp.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(steps):
                batch = train.take(gen.integers(0, train.n, size=hp.batch_size))
                if mode is TrainMode.SAMPLED_MASK:
                    grad_u, grad_v = _mask_gradient(u, v, batch, d.masks(gen, width))
                else:
                    grad_u, grad_v, _ = _penalty_gradient(u, v, batch, d.lam)
                u -= hp.lr * grad_u
                v -= hp.lr * grad_v

            train_rmse = _rmse(u, v, train)
            test_rmse = _rmse(u, v, test) if test is not None else math.nan
            reg = float(np.mean(np.sum(_terms(u, v, train) ** 2, axis=1)))

        if not math.isfinite(train_rmse) or train_rmse**2 > DIVERGENCE_LIMIT:
            records.append(
                ExperimentRecord(
                    run_id=run_id,
                    epoch=epoch,
                    dropout_rate=d.rate,
                    width=width,
                    train_loss=train_rmse,
                    test_loss=math.nan,
                    gap=math.nan,
                    reg_value=math.nan,
                    alpha_hat=math.nan,
                    seed=seed,
                )
            )
            _LOGGER.error("Run %s diverged at epoch %d (train RMSE %s)", run_id, epoch, train_rmse)
            raise DivergenceError(f"training diverged at epoch {epoch}", records=records, epoch=epoch)

        record = ExperimentRecord(
            run_id=run_id,
            epoch=epoch,
            dropout_rate=d.rate,
            width=width,
            train_loss=train_rmse,
            test_loss=test_rmse,
            gap=test_rmse - train_rmse,
            reg_value=reg,
            alpha_hat=width * reg,
            seed=seed,
        )
        records.append(record)
        _LOGGER.debug("%s epoch %d train %.5f test %.5f", run_id, epoch, train_rmse, test_rmse)

    return FactorPair(u, v), records
