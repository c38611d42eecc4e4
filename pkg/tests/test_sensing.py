"""Tests for matrix sensing with dropout."""
from __future__ import annotations

import math

import numpy as np
import pytest

from dropout_capacity.exceptions import (
    DivergenceError,
    InvalidArgumentError,
    RankError,
    ShapeError,
)
from dropout_capacity.numerics import SeededRng
from dropout_capacity.sensing import (
    DropoutConfig,
    FactorPair,
    MeasurementModel,
    SensingSample,
    SgdSchedule,
    TrainMode,
    clip_unit,
    clipped_erm_loss,
    concentration_audit,
    dropout_objective,
    dropout_objective_exact,
    dropout_objective_mc,
    equalized_minimizer,
    erm_loss,
    expected_regularizer,
    explicit_penalty_gradient,
    explicit_regularizer,
    gen_bound_mc,
    gen_bound_optimistic,
    he_factor_pair,
    induced_regularizer,
    induced_regularizer_gaussian,
    induced_regularizer_weighted,
    minimize_induced_regularizer,
    sampled_mask_gradient,
    sensing_bound_preconditions,
    sgd_dropout_train,
    vectorized_regularizer,
)


def _naive_loss(f: FactorPair, s: SensingSample) -> float:
    total = 0.0
    m = f.product()
    for j in range(s.n):
        if s.dense is None:
            pred = m[s.rows[j], s.cols[j]]
        else:
            pred = float(np.sum(m * s.dense[j]))
        total += (s.y[j] - pred) ** 2
    return total / s.n


def test_dropout_config_derived_values() -> None:
    """λ and the survivor scale are the stated functions of the rate."""
    d = DropoutConfig(0.2)
    assert d.lam == pytest.approx(0.25)
    assert d.keep_scale == pytest.approx(1.25)
    assert DropoutConfig(0.0).lam == 0.0


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5, math.nan])
def test_dropout_config_rejects_rate(rate: float) -> None:
    """Rates outside [0, 1) are rejected."""
    with pytest.raises(InvalidArgumentError):
        DropoutConfig(rate)


def test_masks_have_unit_mean(gen: np.random.Generator) -> None:
    """Scaled Bernoulli masks average to one."""
    masks = DropoutConfig(0.3).masks(gen, 200_000)
    np.testing.assert_allclose(np.unique(masks), [0.0, 1 / 0.7])
    assert masks.mean() == pytest.approx(1.0, abs=0.01)


def test_measurement_model_validation() -> None:
    """Indicator probabilities must be simplex vectors of the right length."""
    with pytest.raises(InvalidArgumentError):
        MeasurementModel.indicator([0.5, 0.6], [1.0])
    with pytest.raises(InvalidArgumentError):
        MeasurementModel.indicator([1.5, -0.5], [1.0])
    model = MeasurementModel.uniform(4, 2)
    assert model.min_cell_probability() == pytest.approx(1 / 8)


def test_sample_rejects_bad_indices() -> None:
    """Indicator indices outside the matrix are rejected."""
    with pytest.raises(ShapeError):
        SensingSample.indicator([2], [0], [1.0], (2, 2))


def test_erm_loss_exact_observation(gen: np.random.Generator) -> None:
    """Noise-free observations of UVᵀ have zero loss."""
    f = FactorPair(gen.standard_normal((3, 2)), gen.standard_normal((4, 2)))
    rows, cols = np.divmod(np.arange(12), 4)
    s = SensingSample.indicator(rows, cols, f.product()[rows, cols], (3, 4))
    assert erm_loss(f, s) == pytest.approx(0.0, abs=1e-20)


def test_erm_loss_single_indicator() -> None:
    """A single observation y=2 of a zero entry costs 4."""
    f = FactorPair(np.zeros((2, 1)), np.ones((2, 1)))
    s = SensingSample.indicator([0], [0], [2.0], (2, 2))
    assert erm_loss(f, s) == 4.0


def test_erm_loss_matches_naive_loop(
    factor_pair: FactorPair, indicator_sample: SensingSample, dense_sample: SensingSample
) -> None:
    """Vectorized loss agrees with a per-measurement loop for both models."""
    for s in (indicator_sample, dense_sample):
        assert erm_loss(factor_pair, s) == pytest.approx(_naive_loss(factor_pair, s), rel=1e-12)


def test_erm_loss_shape_mismatch(factor_pair: FactorPair) -> None:
    """Factors and sample must describe the same matrix shape."""
    s = SensingSample.indicator([0], [0], [1.0], (5, 5))
    with pytest.raises(ShapeError):
        erm_loss(factor_pair, s)


def test_explicit_regularizer_small_cases() -> None:
    """Closed-form values on hand-checkable inputs."""
    f = FactorPair([[2.0], [1.0]], [[3.0], [1.0]])
    s = SensingSample.indicator([0], [0], [0.0], (2, 2))
    assert explicit_regularizer(f, s) == pytest.approx(36.0)

    identity = FactorPair(np.eye(2), np.eye(2))
    s = SensingSample.indicator([0, 1], [0, 1], [0.0, 0.0], (2, 2))
    assert explicit_regularizer(identity, s) == pytest.approx(1.0)


def test_indicator_and_dense_regularizer_agree(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """The sparse identity equals the dense computation with one-hot matrices."""
    dense = np.zeros((indicator_sample.n, 4, 3))
    dense[np.arange(indicator_sample.n), indicator_sample.rows, indicator_sample.cols] = 1.0
    as_dense = SensingSample.from_dense(dense, indicator_sample.y)
    assert explicit_regularizer(factor_pair, as_dense) == pytest.approx(
        explicit_regularizer(factor_pair, indicator_sample), rel=1e-12
    )


def test_mc_objective_rate_zero(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """Without dropout the estimate is the exact loss with zero error."""
    mean, stderr = dropout_objective_mc(factor_pair, indicator_sample, DropoutConfig(0.0), 10, SeededRng(1))
    assert mean == erm_loss(factor_pair, indicator_sample)
    assert stderr == 0.0


def test_mc_objective_rejects_zero_trials(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """At least one trial is required."""
    with pytest.raises(InvalidArgumentError):
        dropout_objective_mc(factor_pair, indicator_sample, DropoutConfig(0.5), 0, SeededRng(1))


def test_single_factor_half_rate_closed_form(gen: np.random.Generator) -> None:
    """With d1=1 and rate ½, E B² = 2 so the objective is Ê(y−m)² + Êm²."""
    f = FactorPair(gen.standard_normal((3, 1)), gen.standard_normal((2, 1)))
    s = SensingSample.from_dense(gen.standard_normal((15, 3, 2)), gen.standard_normal(15))
    m = np.einsum("jab,a,b->j", s.dense, f.u[:, 0], f.v[:, 0])
    expected = float(np.mean((s.y - m) ** 2) + np.mean(m**2))
    assert dropout_objective_exact(f, s, DropoutConfig(0.5)) == pytest.approx(expected, rel=1e-12)
    mean, stderr = dropout_objective_mc(f, s, DropoutConfig(0.5), 100_000, SeededRng(3))
    assert abs(mean - expected) <= 4 * stderr


@pytest.mark.parametrize("rate", [0.1, 0.5, 0.9])
def test_dropout_identity(
    factor_pair: FactorPair, indicator_sample: SensingSample, dense_sample: SensingSample, rate: float
) -> None:
    """MC and exact dropout objectives equal L̂ + λR̂."""
    d = DropoutConfig(rate)
    for index, s in enumerate((indicator_sample, dense_sample)):
        closed = dropout_objective(factor_pair, s, d)
        assert dropout_objective_exact(factor_pair, s, d) == pytest.approx(closed, rel=1e-10)
        mean, stderr = dropout_objective_mc(factor_pair, s, d, 100_000, SeededRng(11, index))
        assert abs(mean - closed) <= 4 * stderr


def test_mc_objective_deterministic(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """The same seed gives the same estimate."""
    d = DropoutConfig(0.4)
    first = dropout_objective_mc(factor_pair, indicator_sample, d, 25_000, SeededRng(5))
    second = dropout_objective_mc(factor_pair, indicator_sample, d, 25_000, SeededRng(5))
    assert first == second


def test_expected_regularizer_concentrates(factor_pair: FactorPair) -> None:
    """The empirical regularizer on many uniform samples approaches R(U, V)."""
    model = MeasurementModel.uniform(4, 3)
    gen = np.random.default_rng(0)
    n = 200_000
    s = SensingSample.indicator(gen.integers(0, 4, n), gen.integers(0, 3, n), np.zeros(n), (4, 3))
    assert explicit_regularizer(factor_pair, s) == pytest.approx(
        expected_regularizer(factor_pair, model), rel=0.02
    )


def test_induced_regularizer_examples() -> None:
    """Hand-computed induced regularizer values."""
    assert induced_regularizer_gaussian(np.diag([3.0, 4.0]), 2) == pytest.approx(24.5)
    assert induced_regularizer_gaussian(np.zeros((3, 3)), 1) == 0.0
    model = MeasurementModel.uniform(2, 2)
    assert induced_regularizer_weighted(np.eye(2), model, 2) == pytest.approx(0.5)


def test_induced_regularizer_width_too_small(gen: np.random.Generator) -> None:
    """A width below the rank cannot represent the matrix."""
    with pytest.raises(RankError):
        induced_regularizer_gaussian(gen.standard_normal((4, 4)), 2)


def test_uniform_weighted_equals_scaled_gaussian(gen: np.random.Generator) -> None:
    """Uniform probabilities divide the Gaussian value by d2·d0."""
    m = gen.standard_normal((4, 3))
    weighted = induced_regularizer(m, MeasurementModel.uniform(4, 3), 5)
    assert weighted == pytest.approx(induced_regularizer_gaussian(m, 5) / 12, abs=1e-9)


def _random_indicator_model(gen: np.random.Generator, d2: int, d0: int) -> MeasurementModel:
    return MeasurementModel.indicator(
        0.7 * gen.dirichlet(np.ones(d2)) + 0.3 / d2, 0.7 * gen.dirichlet(np.ones(d0)) + 0.3 / d0
    )


def test_equalized_minimizer_postconditions(gen: np.random.Generator) -> None:
    """The equalized factorization reproduces M, attains Θ and equalizes column products."""
    for _ in range(10):
        d2, d0 = (int(v) for v in gen.integers(2, 6, size=2))
        rank = int(gen.integers(1, min(d2, d0) + 1))
        m = gen.standard_normal((d2, rank)) @ gen.standard_normal((rank, d0))
        for model in (_random_indicator_model(gen, d2, d0), MeasurementModel.gaussian(d2, d0)):
            d1 = rank + 2
            f = equalized_minimizer(m, model, d1)
            assert np.linalg.norm(f.product() - m) <= 1e-8 * np.linalg.norm(m)
            theta = induced_regularizer(m, model, d1)
            assert expected_regularizer(f, model) == pytest.approx(theta, abs=1e-8 * (1 + theta))
            products = np.sqrt(model.row_weights @ f.u**2) * np.sqrt(model.col_weights @ f.v**2)
            assert np.ptp(products) <= 1e-8 * (1 + products.max())


def test_equalized_minimizer_diagonal() -> None:
    """diag(2, 0) at width 2 splits into two unit column products."""
    f = equalized_minimizer(np.diag([2.0, 0.0]), MeasurementModel.gaussian(2, 2), 2)
    products = np.linalg.norm(f.u, axis=0) * np.linalg.norm(f.v, axis=0)
    np.testing.assert_allclose(products, [1.0, 1.0], atol=1e-10)


def test_equalized_minimizer_rejects_zero_probability() -> None:
    """Zero-probability rows make the construction impossible."""
    model = MeasurementModel.indicator([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(InvalidArgumentError):
        equalized_minimizer(np.eye(2), model, 2)


def test_theta_scales_quadratically(gen: np.random.Generator) -> None:
    """Θ(cM) = c²·Θ(M) through the constructed minimizer."""
    m = gen.standard_normal((3, 3))
    model = _random_indicator_model(gen, 3, 3)
    base = expected_regularizer(equalized_minimizer(m, model, 4), model)
    scaled = expected_regularizer(equalized_minimizer(2.5 * m, model, 4), model)
    assert scaled == pytest.approx(6.25 * base, rel=1e-8)


def test_any_factorization_bounded_below(gen: np.random.Generator) -> None:
    """R(U, V) never falls below Θ(UVᵀ)."""
    for _ in range(20):
        f = FactorPair(gen.standard_normal((4, 3)), gen.standard_normal((5, 3)))
        model = _random_indicator_model(gen, 4, 5)
        assert expected_regularizer(f, model) >= induced_regularizer(f.product(), model, 3) - 1e-9


def test_minimization_oracle_does_not_beat_closed_form(gen: np.random.Generator) -> None:
    """Projected gradient descent cannot undercut Θ and stays on UVᵀ = M."""
    m = gen.standard_normal((4, 2)) @ gen.standard_normal((2, 4))
    model = _random_indicator_model(gen, 4, 4)
    f = minimize_induced_regularizer(m, model, 5, SeededRng(2), steps=2_000)
    np.testing.assert_allclose(f.product(), m, atol=1e-8)
    assert expected_regularizer(f, model) >= induced_regularizer(m, model, 5) - 1e-6
    assert expected_regularizer(f, model) == pytest.approx(induced_regularizer(m, model, 5), rel=1e-2)


def test_clip_unit() -> None:
    """Clipping thresholds at ±1 and is idempotent."""
    np.testing.assert_array_equal(clip_unit([1.5, -0.2, -3.0]), [1.0, -0.2, -1.0])
    m = np.random.default_rng(1).standard_normal((4, 4)) * 3
    np.testing.assert_array_equal(clip_unit(clip_unit(m)), clip_unit(m))


def test_clipping_never_increases_loss(factor_pair: FactorPair, gen: np.random.Generator) -> None:
    """For labels in [-1, 1] the clipped predictor has no larger loss."""
    n = 40
    s = SensingSample.indicator(gen.integers(0, 4, n), gen.integers(0, 3, n), gen.uniform(-1, 1, n), (4, 3))
    assert clipped_erm_loss(factor_pair, s) <= erm_loss(factor_pair, s)


def test_vectorized_regularizer(gen: np.random.Generator) -> None:
    """Identity second moment gives λ‖M‖_F²; rate zero gives zero."""
    m = gen.standard_normal((2, 3))
    d = DropoutConfig(0.5)
    assert vectorized_regularizer(m, np.eye(6), d) == pytest.approx(np.sum(m**2))
    assert vectorized_regularizer(m, np.eye(6), DropoutConfig(0.0)) == 0.0
    weights = gen.uniform(size=6)
    naive = sum(weights[i + 2 * j] * m[i, j] ** 2 for i in range(2) for j in range(3))
    assert vectorized_regularizer(m, np.diag(weights), d) == pytest.approx(naive, rel=1e-12)
    with pytest.raises(ShapeError):
        vectorized_regularizer(m, np.eye(5), d)


def test_gen_bound_mc_arithmetic() -> None:
    """α = 0 with ¼·log(2/δ) = 1 and n = 64 adds exactly one."""
    delta = 2 * math.exp(-4)
    assert gen_bound_mc(0.3, 0.0, 10, 64, delta) == pytest.approx(1.3)


def test_gen_bound_mc_reevaluation() -> None:
    """The bound matches an independent evaluation and grows like √α."""
    value = gen_bound_mc(0.1, 1.0, 100, 10_000, 0.05)
    expected = 0.1 + 8 * math.sqrt((2 * 100 * math.log(100) + 0.25 * math.log(40)) / 10_000)
    assert value == pytest.approx(expected, rel=1e-12)
    small = gen_bound_mc(0.0, 1e6, 100, 10_000, 0.5)
    large = gen_bound_mc(0.0, 2e6, 100, 10_000, 0.5)
    assert large / small == pytest.approx(math.sqrt(2), rel=1e-6)
    assert gen_bound_mc(0.1, 1.0, 100, 20_000, 0.05) < value


def test_gen_bound_mc_rejects_delta() -> None:
    """δ outside (0, 1) is rejected."""
    with pytest.raises(InvalidArgumentError):
        gen_bound_mc(0.0, 1.0, 10, 10, 1.0)


def test_gen_bound_optimistic() -> None:
    """Hand-checked value and the O(1/n) decay."""
    assert gen_bound_optimistic(0.0, 10, 4, 1 / math.e, 1.0) == pytest.approx(1.0)
    for n in (8, 100, 10_000):
        assert gen_bound_optimistic(1.0, 50, 2 * n, 0.05) < gen_bound_optimistic(1.0, 50, n, 0.05)
    value = gen_bound_optimistic(1.0, 50, 100_000, 0.05)
    expected = (2 * math.log(1e5) ** 3 * 50 * math.log(50) + 4 * math.log(20)) / 1e5
    assert value == pytest.approx(expected, rel=1e-12)


def test_sensing_bound_preconditions() -> None:
    """Each violated assumption is named."""
    assert sensing_bound_preconditions(10, 8, 1000, min_pq=1 / 80, spectral_norm=0.5) == []
    flags = sensing_bound_preconditions(4, 8, 10, min_pq=1e-6, spectral_norm=2.0)
    assert flags == ["d2<d0", "spectral_norm>1", "min_pq<log(d2)/(n*sqrt(d2*d0))"]


def test_concentration_scaling(factor_pair: FactorPair) -> None:
    """Deviation shrinks with n and √n·deviation stays within a factor 3."""
    rows = concentration_audit(factor_pair, MeasurementModel.uniform(4, 3), [100, 1_000, 10_000], 100, SeededRng(4))
    assert rows[-1].mean_deviation < rows[0].mean_deviation
    scaled = [row.scaled for row in rows]
    assert max(scaled) / min(scaled) < 3


def test_concentration_rank_one_envelope(gen: np.random.Generator) -> None:
    """Rank-one deviations at n = 1000 stay below 5γ²/√n."""
    f = FactorPair(gen.standard_normal((5, 1)), gen.standard_normal((4, 1)))
    (row,) = concentration_audit(f, MeasurementModel.uniform(5, 4), [1_000], 50, SeededRng(9))
    assert row.max_deviation <= 5 * row.gamma_sq / math.sqrt(1_000)


def test_penalty_gradient_matches_finite_differences(
    factor_pair: FactorPair, indicator_sample: SensingSample, dense_sample: SensingSample
) -> None:
    """Analytic gradients of L̂ + λR̂ agree with central differences."""
    d = DropoutConfig(0.3)
    step = 1e-5
    for s in (indicator_sample, dense_sample):
        grad_u, grad_v = explicit_penalty_gradient(factor_pair, s, d)
        for grad, which in ((grad_u, "u"), (grad_v, "v")):
            numeric = np.zeros_like(grad)
            for index in np.ndindex(grad.shape):
                parts = {"u": np.array(factor_pair.u), "v": np.array(factor_pair.v)}
                parts[which][index] += step
                upper = dropout_objective(FactorPair(parts["u"], parts["v"]), s, d)
                parts[which][index] -= 2 * step
                lower = dropout_objective(FactorPair(parts["u"], parts["v"]), s, d)
                numeric[index] = (upper - lower) / (2 * step)
            assert np.linalg.norm(grad - numeric) <= 1e-5 * np.linalg.norm(numeric)


def test_sampled_mask_gradient_is_unbiased(factor_pair: FactorPair, dense_sample: SensingSample) -> None:
    """Averaged sampled-mask gradients match the explicit-penalty gradient."""
    d = DropoutConfig(0.4)
    gen = np.random.default_rng(8)
    draws = np.array(
        [
            np.concatenate([g.ravel() for g in sampled_mask_gradient(factor_pair, dense_sample, d.masks(gen, 3))])
            for _ in range(20_000)
        ]
    )
    target = np.concatenate([g.ravel() for g in explicit_penalty_gradient(factor_pair, dense_sample, d)])
    stderr = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 4.5 * stderr + 1e-12)


def test_he_factor_pair_scaling() -> None:
    """He initialization uses fan-in variances 2/d1 and 2/d0."""
    f = he_factor_pair(400, 300, 50, SeededRng(0))
    assert f.u.var() == pytest.approx(2 / 50, rel=0.05)
    assert f.v.var() == pytest.approx(2 / 300, rel=0.05)


def test_training_rate_zero_penalty_equals_plain_sgd(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """Both modes coincide without dropout, and records cover every epoch."""
    hp = SgdSchedule(lr=0.05, batch_size=8, epochs=3)
    d = DropoutConfig(0.0)
    mask_run, _ = sgd_dropout_train(factor_pair, indicator_sample, d, hp, TrainMode.SAMPLED_MASK, SeededRng(1))
    pen_run, pen_records = sgd_dropout_train(factor_pair, indicator_sample, d, hp, "penalty", SeededRng(1))
    np.testing.assert_allclose(mask_run.product(), pen_run.product(), atol=1e-12)
    assert [r.epoch for r in pen_records] == [1, 2, 3]
    assert all(math.isnan(r.beta_hat) and math.isnan(r.phi) for r in pen_records)
    assert pen_records[-1].alpha_hat == pytest.approx(3 * pen_records[-1].reg_value)


def test_training_reduces_loss(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """A few epochs of penalized SGD lower the training RMSE."""
    hp = SgdSchedule(lr=0.02, batch_size=10, epochs=20)
    _, records = sgd_dropout_train(
        factor_pair, indicator_sample, DropoutConfig(0.1), hp, "penalty", SeededRng(2), test=indicator_sample
    )
    start = math.sqrt(erm_loss(factor_pair, indicator_sample))
    assert records[-1].train_loss < start
    assert records[-1].test_loss == pytest.approx(records[-1].train_loss)


def test_training_divergence_carries_records(factor_pair: FactorPair, indicator_sample: SensingSample) -> None:
    """A huge learning rate aborts with the records emitted so far."""
    hp = SgdSchedule(lr=1e4, batch_size=30, epochs=50)
    with pytest.raises(DivergenceError) as info:
        sgd_dropout_train(factor_pair, indicator_sample, DropoutConfig(0.0), hp, "penalty", SeededRng(0))
    assert info.value.records
    assert info.value.records[-1].epoch == info.value.epoch
    last = info.value.records[-1].train_loss
    assert not math.isfinite(last) or last**2 > 1e6
    diagnostic = info.value.records[-1]
    assert math.isnan(diagnostic.test_loss) and math.isnan(diagnostic.reg_value) and math.isnan(diagnostic.alpha_hat)


def test_schedule_validation() -> None:
    """Non-positive learning rates and batch sizes are rejected."""
    with pytest.raises(InvalidArgumentError):
        SgdSchedule(lr=0.0, batch_size=1, epochs=1)
    with pytest.raises(InvalidArgumentError):
        SgdSchedule(lr=1.0, batch_size=0, epochs=1)
    assert SgdSchedule(lr=1.0, batch_size=4, epochs=1).steps_per_epoch(9) == 3
