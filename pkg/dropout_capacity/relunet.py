"""Two-layer ReLU networks with dropout on the hidden layer.

The network is f(x) = U·σ(Vᵀx) with U of shape d2×d1 and V of shape d0×d1.
Dropout on the hidden units adds R̂(w) = λ·Σⱼ‖uⱼ‖²·âⱼ² to the empirical risk,
where âⱼ² is the empirical second moment of hidden unit j. The capacity
quantities here (α̂, β̂, φ, ‖X‖_{C†}) feed the Rademacher bound calculators.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import (
    BETA_MIN_ENERGY,
    COVARIANCE_RANK_TOL,
    DEFAULT_BETA_DIRS,
    DEFAULT_SYMMETRIZED_RESAMPLES,
    DIVERGENCE_LIMIT,
    MC_CHUNK,
)
from .exceptions import DivergenceError, InvalidArgumentError, ShapeError
from .numerics import (
    Matrix,
    RngLike,
    Vector,
    as_generator,
    as_matrix,
    as_seeded,
    as_vector,
    frozen,
    mahalanobis_data_norm,
    pseudo_inverse,
    rademacher,
    second_moment,
    svd,
)
from .records import ExperimentRecord
from .sensing import (
    DropoutConfig,
    SgdSchedule,
    TrainMode,
    exact_mask_distribution,
    monte_carlo_mean,
)

_LOGGER = logging.getLogger(__name__)

Sampler = Callable[[np.random.Generator, int], Matrix]


@dataclass(frozen=True, eq=False)
class TwoLayerNet:
    """ReLU network with top layer U (d2×d1) and bottom layer V (d0×d1)."""

    u: Matrix
    v: Matrix

    def __post_init__(self) -> None:
        """Validate and freeze the weights."""
        u = as_matrix(self.u, "u")
        v = as_matrix(self.v, "v")
        if u.shape[1] != v.shape[1] or u.shape[1] < 1:
            raise ShapeError(f"layer widths differ or are empty: {u.shape} vs {v.shape}")
        object.__setattr__(self, "u", frozen(u))
        object.__setattr__(self, "v", frozen(v))

    @property
    def d0(self) -> int:
        """Input dimension."""
        return self.v.shape[0]

    @property
    def d1(self) -> int:
        """Hidden width."""
        return self.u.shape[1]

    @property
    def d2(self) -> int:
        """Output dimension."""
        return self.u.shape[0]

    def scaled(self, top: float) -> TwoLayerNet:
        """Return the network with U multiplied by top."""
        return TwoLayerNet(self.u * top, self.v)


@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Inputs (d0×n) with targets (d2×n) in [-1, 1]."""

    inputs: Matrix
    targets: Matrix

    def __post_init__(self) -> None:
        """Validate and freeze the data."""
        x = as_matrix(self.inputs, "inputs")
        y = np.asarray(self.targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
        y = as_matrix(y, "targets")
        if x.shape[1] != y.shape[1]:
            raise ShapeError(f"inputs have {x.shape[1]} columns but targets have {y.shape[1]}")
        if y.size and np.abs(y).max() > 1.0 + 1e-12:
            raise InvalidArgumentError("targets must lie in [-1, 1]")
        object.__setattr__(self, "inputs", frozen(x))
        object.__setattr__(self, "targets", frozen(y))

    @property
    def n(self) -> int:
        """Number of examples."""
        return self.inputs.shape[1]

    @property
    def d0(self) -> int:
        """Input dimension."""
        return self.inputs.shape[0]

    @property
    def d2(self) -> int:
        """Target dimension."""
        return self.targets.shape[0]

    def take(self, idx: ArrayLike) -> LabeledSet:
        """Return the examples at idx (repeats allowed)."""
        index = np.asarray(idx, dtype=np.intp)
        return LabeledSet(self.inputs[:, index], self.targets[:, index])


@dataclass(frozen=True)
class DataGeometry:
    """Data-side quantities of the bounds: ‖X‖_{C†} and rank(C)."""

    x_mahalanobis: float
    rank_c: int
    n: int


@dataclass(frozen=True)
class CapacityReport:
    """Plug-in capacity quantities of a single-output network on a sample."""

    alpha_hat: float
    beta_hat: float
    phi: float
    reg_value: float
    path_norm_sq: float
    x_mahalanobis: float
    rank_c: int


@dataclass(frozen=True)
class IsotropyCheck:
    """Monte-Carlo regularizer against (λ/2)·path-norm²."""

    lhs: float
    rhs: float
    stderr: float


def _check_inputs(net: TwoLayerNet, x: Matrix) -> None:
    if x.shape[0] != net.d0:
        raise ShapeError(f"network expects inputs of dimension {net.d0}, got {x.shape[0]}")


def _check_data(net: TwoLayerNet, data: LabeledSet) -> None:
    _check_inputs(net, data.inputs)
    if data.d2 != net.d2:
        raise ShapeError(f"network has {net.d2} outputs but targets have {data.d2}")
    if data.n < 1:
        raise ShapeError("data set is empty")


def relu(z: NDArray[np.float64]) -> NDArray[np.float64]:
    """Elementwise max(0, z)."""
    return np.maximum(z, 0.0)


def hidden_activations(net: TwoLayerNet, x: ArrayLike) -> Matrix:
    """Return σ(Vᵀx) for the columns of x."""
    inputs = as_matrix(x, "x")
    _check_inputs(net, inputs)
    return relu(net.v.T @ inputs)


def forward(net: TwoLayerNet, x: ArrayLike) -> NDArray[np.float64]:
    """Return U·σ(Vᵀx) for a vector x or for each column of a matrix x."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return net.u @ hidden_activations(net, arr[:, None])[:, 0]
    return net.u @ hidden_activations(net, arr)


def activation_moments(net: TwoLayerNet, x: ArrayLike) -> Vector:
    """Return âⱼ² = Êᵢ σ(vⱼᵀxᵢ)² for every hidden unit."""
    return np.mean(hidden_activations(net, x) ** 2, axis=1)


def erm_loss_relu(net: TwoLayerNet, data: LabeledSet) -> float:
    """Return L̂(w) = Êᵢ‖yᵢ − f(xᵢ)‖²."""
    _check_data(net, data)
    resid = data.targets - forward(net, data.inputs)
    return float(np.mean(np.sum(resid**2, axis=0)))


def explicit_regularizer_relu(net: TwoLayerNet, data: LabeledSet, d: DropoutConfig) -> float:
    """Return R̂(w) = λ·Σⱼ‖uⱼ‖²·âⱼ²."""
    _check_data(net, data)
    return d.lam * _unscaled_regularizer(net, data.inputs)


def _unscaled_regularizer(net: TwoLayerNet, x: Matrix) -> float:
    return float(np.sum(net.u**2, axis=0) @ activation_moments(net, x))


def dropout_objective_relu(net: TwoLayerNet, data: LabeledSet, d: DropoutConfig) -> float:
    """Closed-form dropout objective L̂(w) + R̂(w)."""
    return erm_loss_relu(net, data) + explicit_regularizer_relu(net, data, d)


def dropout_objective_mc_relu(
    net: TwoLayerNet, data: LabeledSet, d: DropoutConfig, trials: int, rng: RngLike
) -> tuple[float, float]:
    """Monte-Carlo estimate of Êᵢ E_B‖yᵢ − U·B·σ(Vᵀxᵢ)‖².

    Returns:
        Tuple of (mean, standard error).
    """
    if trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {trials}")
    _check_data(net, data)
    if d.rate == 0.0:
        return erm_loss_relu(net, data), 0.0

    hidden = hidden_activations(net, data.inputs)
    seeded = as_seeded(rng)
    chunk = max(1, min(MC_CHUNK, 2_000_000 // (data.n * net.d2)))
    values = []
    for index, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        masks = d.masks(seeded.spawn(index).generator(), (size, net.d1))
        outputs = np.einsum("ti,ki,in->tkn", masks, net.u, hidden)
        values.append(np.mean(np.sum((data.targets[None] - outputs) ** 2, axis=1), axis=1))
    return monte_carlo_mean(values)


def dropout_objective_exact_relu(net: TwoLayerNet, data: LabeledSet, d: DropoutConfig) -> float:
    """Exact dropout objective by enumerating every hidden-unit mask."""
    _check_data(net, data)
    hidden = hidden_activations(net, data.inputs)
    masks, probs = exact_mask_distribution(d, net.d1)
    outputs = np.einsum("ti,ki,in->tkn", masks, net.u, hidden)
    values = np.mean(np.sum((data.targets[None] - outputs) ** 2, axis=1), axis=1)
    return float(probs @ values)


def path_norm_sq(net: TwoLayerNet) -> float:
    """Sum over input-hidden-output paths of squared weight products."""
    return float(np.sum(net.u**2, axis=0) @ np.sum(net.v**2, axis=0))


def standard_gaussian_sampler(d0: int) -> Sampler:
    """Return a sampler of d0-dimensional standard Gaussian columns."""

    def sample(gen: np.random.Generator, n: int) -> Matrix:
        return gen.standard_normal((d0, n))

    return sample


def isotropy_regularizer_check(
    net: TwoLayerNet, dist: Sampler, mc_n: int, d: DropoutConfig, rng: RngLike
) -> IsotropyCheck:
    """Compare λ·Σⱼ‖uⱼ‖²·E σ(vⱼᵀx)² by Monte-Carlo with (λ/2)·path-norm².

    The two agree when dist is symmetric (x and -x equally likely) with
    identity second moment.
    """
    if mc_n < 2:
        raise InvalidArgumentError(f"mc_n must be >= 2, got {mc_n}")
    weights = d.lam * np.sum(net.u**2, axis=0)
    seeded = as_seeded(rng)
    values = []
    for index, start in enumerate(range(0, mc_n, MC_CHUNK)):
        size = min(MC_CHUNK, mc_n - start)
        x = dist(seeded.spawn(index).generator(), size)
        values.append(weights @ relu(net.v.T @ x) ** 2)
    lhs, stderr = monte_carlo_mean(values)
    return IsotropyCheck(lhs=lhs, rhs=0.5 * d.lam * path_norm_sq(net), stderr=stderr)


def data_geometry(x: ArrayLike) -> DataGeometry:
    """Return ‖X‖_{C†} and rank(C) for the empirical second moment C."""
    inputs = as_matrix(x, "x")
    moment = second_moment(inputs)
    sigma = svd(moment).singular_values
    rank = int(np.count_nonzero(sigma > COVARIANCE_RANK_TOL * sigma[0])) if sigma[0] > 0 else 0
    c_pinv = pseudo_inverse(moment, tol=COVARIANCE_RANK_TOL)
    c_pinv = 0.5 * (c_pinv + c_pinv.T)
    return DataGeometry(
        x_mahalanobis=mahalanobis_data_norm(inputs, c_pinv), rank_c=rank, n=inputs.shape[1]
    )


def co_adaptation(psi: Vector) -> float:
    """Return φ = ‖ψ‖₁/(√d1·‖ψ‖₂), defined as 1 for ψ = 0."""
    flow = np.abs(as_vector(psi, "psi"))
    norm = float(np.sqrt(flow @ flow))
    if norm == 0.0:
        return 1.0
    return float(flow.sum() / (math.sqrt(flow.size) * norm))


def retention_ratio(directions: Matrix, x: Matrix) -> float:
    """Return min over directions of Ê σ(vᵀx)² / Ê(vᵀx)².

    Directions whose energy Ê(vᵀx)² is below the floor are skipped; with no
    usable direction the ratio is reported as 1.
    """
    proj = directions @ x
    energy = np.mean(proj**2, axis=1)
    usable = energy >= BETA_MIN_ENERGY
    if not np.any(usable):
        _LOGGER.debug("No direction carries energy; reporting retention 1")
        return 1.0
    kept = np.mean(relu(proj[usable]) ** 2, axis=1)
    return float(np.min(kept / energy[usable]))


def capacity_report(
    net: TwoLayerNet,
    data: LabeledSet,
    d: DropoutConfig,
    beta_dirs: int = DEFAULT_BETA_DIRS,
    rng: RngLike | None = None,
    *,
    geometry: DataGeometry | None = None,
) -> CapacityReport:
    """Return α̂, β̂, φ, R̂, path-norm² and the data geometry for a single-output net.

    Args:
        net: Network with d2 = 1.
        data: Sample the plug-in estimates are computed on, n >= 2.
        d: Dropout config giving λ for R̂.
        beta_dirs: Random unit directions probed for β̂, in addition to the
            columns of V.
        rng: Source of the random directions; required when beta_dirs > 0.
        geometry: Precomputed ‖X‖_{C†} and rank(C) for data.
    """
    _check_data(net, data)
    if net.d2 != 1:
        raise ShapeError(f"capacity report needs a single-output network, got d2={net.d2}")
    if data.n < 2:
        raise InvalidArgumentError("capacity report needs at least two examples")

    x = data.inputs
    moments = activation_moments(net, x)
    psi = np.abs(net.u[0]) * np.sqrt(moments)

    directions = [net.v.T[np.linalg.norm(net.v, axis=0) > 0]]
    if beta_dirs > 0:
        if rng is None:
            raise InvalidArgumentError("probing random directions needs an rng")
        gen = as_generator(rng)
        directions.append(gen.standard_normal((beta_dirs, net.d0)))
    stacked = np.vstack(directions)
    stacked = stacked / np.linalg.norm(stacked, axis=1, keepdims=True)

    if geometry is None:
        geometry = data_geometry(x)
    return CapacityReport(
        alpha_hat=float(psi.sum()),
        beta_hat=retention_ratio(stacked, x),
        phi=co_adaptation(psi),
        reg_value=d.lam * float(net.u[0] ** 2 @ moments),
        path_norm_sq=path_norm_sq(net),
        x_mahalanobis=geometry.x_mahalanobis,
        rank_c=geometry.rank_c,
    )


def complexity_measure(net: TwoLayerNet, data: LabeledSet) -> float:
    """Return √(d1·Σⱼ‖uⱼ‖²âⱼ²/n)."""
    _check_data(net, data)
    return math.sqrt(net.d1 * _unscaled_regularizer(net, data.inputs) / data.n)


def symmetrized_alpha(
    net: TwoLayerNet,
    data: LabeledSet,
    rng: RngLike,
    resamples: int = DEFAULT_SYMMETRIZED_RESAMPLES,
) -> float:
    """Estimate α' = Σⱼ|uⱼ|·a'ⱼ with a'ⱼ² averaged over fresh sign flips of the inputs."""
    _check_data(net, data)
    if resamples < 1:
        raise InvalidArgumentError(f"resamples must be >= 1, got {resamples}")
    seeded = as_seeded(rng)
    moments = np.zeros(net.d1)
    for index in range(resamples):
        signs = rademacher(seeded.spawn(index).generator(), data.n)
        moments += activation_moments(net, data.inputs * signs[None, :])
    moments /= resamples
    return float(np.linalg.norm(net.u, axis=0) @ np.sqrt(moments))


def counterexample_distribution(delta: float) -> tuple[DiscreteDistribution, Vector]:
    """Three-atom distribution on the unit circle and w = (1/√δ, 0).

    Atoms: (1, 0) with probability δ, and (−δ/(1−δ), ±√(1−2δ)/(1−δ)) with
    probability (1−δ)/2 each. The mean is zero and E σ(wᵀx)² = 1 while
    ‖w‖ = 1/√δ grows without bound as δ → 0.
    """
    if not 0.0 < delta < 0.5:
        raise InvalidArgumentError(f"delta must lie in (0, 1/2), got {delta}")
    first = -delta / (1.0 - delta)
    second = math.sqrt(1.0 - 2.0 * delta) / (1.0 - delta)
    atoms = np.array([[1.0, first, first], [0.0, second, -second]])
    weights = np.array([delta, 0.5 * (1.0 - delta), 0.5 * (1.0 - delta)])
    return DiscreteDistribution(atoms, weights), np.array([1.0 / math.sqrt(delta), 0.0])


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finitely many atoms (columns) with probabilities."""

    atoms: Matrix
    weights: Vector

    def __post_init__(self) -> None:
        """Validate the atoms and weights."""
        atoms = as_matrix(self.atoms, "atoms")
        weights = as_vector(self.weights, "weights")
        if atoms.shape[1] != weights.size:
            raise ShapeError("one weight per atom required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("weights are not a probability vector")
        object.__setattr__(self, "atoms", frozen(atoms))
        object.__setattr__(self, "weights", frozen(weights))

    def sample(self, gen: np.random.Generator, n: int) -> Matrix:
        """Draw n atoms as columns."""
        return self.atoms[:, gen.choice(self.weights.size, size=n, p=self.weights)]

    def expect(self, fn: Callable[[Matrix], NDArray[np.float64]]) -> float:
        """Return the exact expectation of fn evaluated columnwise."""
        return float(self.weights @ fn(self.atoms))

    def mean(self) -> Vector:
        """Return E[x]."""
        return self.atoms @ self.weights


def _validate_beta(beta: float) -> None:
    if not 0.0 < beta <= 1.0:
        raise InvalidArgumentError(f"beta must lie in (0, 1], got {beta}")


def _validate_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")


def _validate_n(n: int) -> None:
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")


def rademacher_bound(alpha: float, beta: float, x_mahal: float, n: int) -> float:
    """Empirical Rademacher bound 2α‖X‖_{C†}/(n√β)."""
    _validate_beta(beta)
    _validate_n(n)
    return 2.0 * alpha * x_mahal / (n * math.sqrt(beta))


def rademacher_bound_expected(alpha: float, beta: float, rank_c: int, n: int) -> float:
    """Expected Rademacher bound 2α√(rank(C)/(βn))."""
    _validate_beta(beta)
    _validate_n(n)
    return 2.0 * alpha * math.sqrt(rank_c / (beta * n))


def linear_class_rademacher(
    x: ArrayLike, radius: float, d1: int, trials: int, rng: RngLike
) -> tuple[float, float]:
    """Monte-Carlo empirical Rademacher complexity of the embedded linear class.

    The class {x ↦ wᵀx : (2/d1)·Ê(wᵀx)² ≤ radius} is what the width-d1
    embedding realizes at regularizer value radius; its complexity is
    √(d1·radius/2)·E‖C^{†/2}Σᵢζᵢxᵢ‖/n.

    Returns:
        Tuple of (mean, standard error).
    """
    inputs = as_matrix(x, "x")
    if trials < 2:
        raise InvalidArgumentError(f"trials must be >= 2, got {trials}")
    n = inputs.shape[1]
    c_pinv = pseudo_inverse(second_moment(inputs), tol=COVARIANCE_RANK_TOL)
    c_pinv = 0.5 * (c_pinv + c_pinv.T)
    scale = math.sqrt(d1 * radius / 2.0) / n
    seeded = as_seeded(rng)
    chunk = max(1, min(MC_CHUNK, 2_000_000 // n))
    values = []
    for index, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        sums = inputs @ rademacher(seeded.spawn(index).generator(), (n, size))
        forms = np.einsum("it,ij,jt->t", sums, c_pinv, sums)
        values.append(scale * np.sqrt(np.clip(forms, 0.0, None)))
    return monte_carlo_mean(values)


def lower_bound_embedding(w: ArrayLike, d1: int) -> TwoLayerNet:
    """Embed the linear map x ↦ wᵀx in a width-d1 ReLU network.

    Uses σ(z) − σ(−z) = z: u = (2/d1)(1, −1, …), V = w(1, −1, …).
    """
    weights = as_vector(w, "w")
    if d1 < 2 or d1 % 2:
        raise InvalidArgumentError(f"d1 must be a positive even number, got {d1}")
    signs = np.tile([1.0, -1.0], d1 // 2)
    return TwoLayerNet((2.0 / d1) * signs[None, :], np.outer(weights, signs))


def apply_signs(data: LabeledSet, signs: ArrayLike) -> LabeledSet:
    """Multiply each input column by its ±1 sign; targets unchanged."""
    flips = as_vector(signs, "signs")
    if flips.size != data.n:
        raise ShapeError(f"need {data.n} signs, got {flips.size}")
    return LabeledSet(data.inputs * flips[None, :], data.targets)


def symmetrize(data: LabeledSet, rng: RngLike) -> LabeledSet:
    """Return {(ζᵢxᵢ, yᵢ)} with independent Rademacher ζᵢ."""
    return apply_signs(data, rademacher(as_generator(rng), data.n))


def _confidence_term(delta: float, n: int) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def gen_bound_regression(
    train_loss: float, alpha: float, beta: float, x_mahal: float, n: int, delta: float
) -> float:
    """Squared-loss bound L̂ + 16α‖X‖_{C†}/(√β·n) + 12√(log(2/δ)/(2n))."""
    _validate_beta(beta)
    _validate_delta(delta)
    _validate_n(n)
    return train_loss + 16.0 * alpha * x_mahal / (math.sqrt(beta) * n) + 12.0 * _confidence_term(delta, n)


def gen_bound_symmetrized(
    train_loss_sym: float, alpha_prime: float, x_mahal: float, n: int, delta: float
) -> float:
    """Bound from symmetrized training 2L̂_{S'} + 46α'‖X‖_{C†}/n + 24√(log(2/δ)/(2n))."""
    _validate_delta(delta)
    _validate_n(n)
    return 2.0 * train_loss_sym + 46.0 * alpha_prime * x_mahal / n + 24.0 * _confidence_term(delta, n)


def gen_bound_classification(
    train_loss: float,
    alpha: float,
    beta: float | None,
    x_mahal: float,
    n: int,
    delta: float,
    symmetrized: bool = False,
) -> float:
    """Upper bound on the misclassification probability P{y·g(x) < 0}.

    Plain: L̂ + 8α‖X‖_{C†}/(√β·n) + 4√(log(1/δ)/(2n)).
    Symmetrized: 2L̂ + 23α'‖X‖_{C†}/n + 8√(log(1/δ)/(2n)); beta is ignored.
    """
    _validate_delta(delta)
    _validate_n(n)
    confidence = math.sqrt(math.log(1.0 / delta) / (2.0 * n))
    if symmetrized:
        return 2.0 * train_loss + 23.0 * alpha * x_mahal / n + 8.0 * confidence
    if beta is None:
        raise InvalidArgumentError("beta is required for the plain classification bound")
    _validate_beta(beta)
    return train_loss + 8.0 * alpha * x_mahal / (math.sqrt(beta) * n) + 4.0 * confidence


def clip_scalar_output(net: TwoLayerNet, x: ArrayLike) -> float | NDArray[np.float64]:
    """Return g(x) = max(−1, min(1, f(x))) for a single-output network."""
    if net.d2 != 1:
        raise ShapeError(f"clipped output needs d2=1, got {net.d2}")
    out = np.clip(forward(net, x), -1.0, 1.0)
    if out.ndim == 1 and np.asarray(x).ndim == 1:
        return float(out[0])
    return out[0]


def clipped_loss(net: TwoLayerNet, data: LabeledSet) -> float:
    """Mean squared loss of the clipped predictor."""
    _check_data(net, data)
    out = np.clip(forward(net, data.inputs), -1.0, 1.0)
    return float(np.mean(np.sum((data.targets - out) ** 2, axis=0)))


def classification_error(net: TwoLayerNet, data: LabeledSet) -> float:
    """Fraction of examples with y·g(x) ≤ 0."""
    _check_data(net, data)
    margins = data.targets[0] * clip_scalar_output(net, data.inputs)
    return float(np.mean(margins <= 0.0))


def he_two_layer(d0: int, d1: int, d2: int, rng: RngLike) -> TwoLayerNet:
    """He-initialized network: V has fan-in d0, U has fan-in d1."""
    gen = as_generator(rng)
    u = gen.standard_normal((d2, d1)) * math.sqrt(2.0 / d1)
    v = gen.standard_normal((d0, d1)) * math.sqrt(2.0 / d0)
    return TwoLayerNet(u, v)


def _gradients(
    u: Matrix,
    v: Matrix,
    x: Matrix,
    y: Matrix,
    lam: float,
    mask: Matrix | None = None,
) -> tuple[Matrix, Matrix, float]:
    """Gradients of the (masked or penalized) squared loss; also returns L̂."""
    n = x.shape[1]
    z = v.T @ x
    hidden = relu(z)
    shown = hidden if mask is None else mask * hidden
    err = u @ shown - y
    grad_u = (2.0 / n) * err @ shown.T
    grad_hidden = (2.0 / n) * u.T @ err
    if mask is not None:
        grad_hidden *= mask
    if lam:
        grad_u += 2.0 * lam * u * np.mean(hidden**2, axis=1)[None, :]
        grad_hidden += (2.0 * lam / n) * np.sum(u**2, axis=0)[:, None] * hidden
    grad_v = x @ (grad_hidden * (z > 0.0)).T
    return grad_u, grad_v, float(np.mean(np.sum(err**2, axis=0)))


def explicit_penalty_gradient_relu(
    net: TwoLayerNet, data: LabeledSet, d: DropoutConfig
) -> tuple[Matrix, Matrix]:
    """Gradient of L̂(w) + R̂(w); the ReLU derivative at 0 is taken as 0."""
    _check_data(net, data)
    grad_u, grad_v, _ = _gradients(net.u, net.v, data.inputs, data.targets, d.lam)
    return grad_u, grad_v


def sampled_mask_gradient_relu(
    net: TwoLayerNet, data: LabeledSet, mask: ArrayLike
) -> tuple[Matrix, Matrix]:
    """Gradient of the squared loss with hidden activations scaled by mask (d1×n)."""
    _check_data(net, data)
    scale = as_matrix(mask, "mask")
    if scale.shape != (net.d1, data.n):
        raise ShapeError(f"mask must be {(net.d1, data.n)}, got {scale.shape}")
    grad_u, grad_v, _ = _gradients(net.u, net.v, data.inputs, data.targets, 0.0, scale)
    return grad_u, grad_v


def sgd_dropout_train_relu(
    init: TwoLayerNet,
    train: LabeledSet,
    d: DropoutConfig,
    hp: SgdSchedule,
    mode: TrainMode | str,
    rng: RngLike,
    *,
    test: LabeledSet | None = None,
    run_id: str = "",
    seed: int = 0,
    beta_dirs: int = DEFAULT_BETA_DIRS,
    geometry: DataGeometry | None = None,
    symmetrized_from: LabeledSet | None = None,
) -> tuple[TwoLayerNet, list[ExperimentRecord]]:
    """Train a single-output ReLU network with hidden-layer dropout.

    Sampled-mask mode draws an independent mask per example and hidden unit;
    explicit-penalty mode descends L̂ + R̂ on the minibatch. Losses in the
    records are squared losses of the clipped predictor. When
    symmetrized_from is given (the raw inputs before sign flipping), alpha_hat
    is the symmetrized α' estimated on it.

    Raises:
        DivergenceError: Training loss went non-finite or above the limit.
    """
    mode = TrainMode(mode)
    _check_data(init, train)
    if test is not None:
        _check_data(init, test)
    seeded = as_seeded(rng)
    gen = seeded.spawn(0).generator()
    if geometry is None:
        geometry = data_geometry(train.inputs)
    u = np.array(init.u)
    v = np.array(init.v)
    steps = hp.steps_per_epoch(train.n)
    records: list[ExperimentRecord] = []

    for epoch in range(1, hp.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(steps):
                idx = gen.integers(0, train.n, size=hp.batch_size)
                x, y = train.inputs[:, idx], train.targets[:, idx]
                if mode is TrainMode.SAMPLED_MASK:
                    mask = d.masks(gen, (u.shape[1], idx.size))
                    grad_u, grad_v, _ = _gradients(u, v, x, y, 0.0, mask)
                else:
                    grad_u, grad_v, _ = _gradients(u, v, x, y, d.lam)
                u -= hp.lr * grad_u
                v -= hp.lr * grad_v
            raw_loss = float(np.mean(np.sum((train.targets - u @ relu(v.T @ train.inputs)) ** 2, axis=0)))

        if not math.isfinite(raw_loss) or raw_loss > DIVERGENCE_LIMIT:
            records.append(
                ExperimentRecord(
                    run_id=run_id,
                    epoch=epoch,
                    dropout_rate=d.rate,
                    width=u.shape[1],
                    train_loss=raw_loss,
                    test_loss=math.nan,
                    gap=math.nan,
                    reg_value=math.nan,
                    alpha_hat=math.nan,
                    seed=seed,
                )
            )
            _LOGGER.error("Run %s diverged at epoch %d (train loss %s)", run_id, epoch, raw_loss)
            raise DivergenceError(f"training diverged at epoch {epoch}", records=records, epoch=epoch)

        net = TwoLayerNet(u, v)
        report = capacity_report(
            net, train, d, beta_dirs, seeded.spawn(epoch), geometry=geometry
        )
        alpha = report.alpha_hat
        if symmetrized_from is not None:
            alpha = symmetrized_alpha(net, symmetrized_from, seeded.spawn(hp.epochs + epoch))
        train_loss = clipped_loss(net, train)
        test_loss = clipped_loss(net, test) if test is not None else math.nan
        records.append(
            ExperimentRecord(
                run_id=run_id,
                epoch=epoch,
                dropout_rate=d.rate,
                width=net.d1,
                train_loss=train_loss,
                test_loss=test_loss,
                gap=test_loss - train_loss,
                reg_value=report.reg_value,
                alpha_hat=alpha,
                beta_hat=report.beta_hat,
                phi=report.phi,
                seed=seed,
            )
        )
        _LOGGER.debug(
            "%s epoch %d train %.5f test %.5f phi %.4f", run_id, epoch, train_loss, test_loss, report.phi
        )

    return TwoLayerNet(u, v), records
