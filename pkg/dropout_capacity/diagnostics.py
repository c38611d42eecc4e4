"""Self-audit of the dropout identities and evaluation of the generalization bounds."""
from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from rich.console import Console
from rich.table import Table

from .const import DEFAULT_K_CONST, TASK_MC, TASK_RELU
from .coordinator import RunOutcome
from .exceptions import InvalidArgumentError
from .numerics import SeededRng
from .records import BoundQuantities
from .relunet import (
    LabeledSet,
    TwoLayerNet,
    counterexample_distribution,
    dropout_objective_exact_relu,
    dropout_objective_mc_relu,
    erm_loss_relu,
    explicit_penalty_gradient_relu,
    explicit_regularizer_relu,
    forward,
    gen_bound_classification,
    gen_bound_regression,
    gen_bound_symmetrized,
    isotropy_regularizer_check,
    lower_bound_embedding,
    rademacher_bound,
    rademacher_bound_expected,
    relu,
    standard_gaussian_sampler,
)
from .sensing import (
    DropoutConfig,
    FactorPair,
    MeasurementModel,
    SensingSample,
    concentration_audit,
    dropout_objective_exact,
    dropout_objective_mc,
    equalized_minimizer,
    erm_loss,
    expected_regularizer,
    explicit_penalty_gradient,
    explicit_regularizer,
    gen_bound_mc,
    gen_bound_optimistic,
    induced_regularizer,
    minimize_induced_regularizer,
    sensing_bound_preconditions,
)

_LOGGER = logging.getLogger(__name__)

AUDIT_RATES: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
TASK_RELU_SYM = f"{TASK_RELU}-sym"

# Independent audit streams of SeededRng(seed)
_STREAMS = {
    "sensing": 10,
    "relu": 11,
    "induced": 12,
    "isotropy": 13,
    "gradient": 14,
    "concentration": 15,
}


@dataclass(frozen=True, kw_only=True)
class AuditCheck:
    """Outcome of one oracle cross-check over a batch of random instances."""

    name: str
    passes: int
    total: int
    required: int
    worst: float
    description: str

    @property
    def passed(self) -> bool:
        """True when enough instances met the tolerance."""
        return self.passes >= self.required


@dataclass(frozen=True)
class AuditReport:
    """All checks of one audit run."""

    seed: int
    checks: list[AuditCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True when every check passed."""
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> list[str]:
        """Names of the failed checks."""
        return [check.name for check in self.checks if not check.passed]


def _random_sensing_instance(
    gen: np.random.Generator, rates: Sequence[float], indicator: bool
) -> tuple[FactorPair, SensingSample, DropoutConfig]:
    d2, d0 = gen.integers(1, 9, size=2)
    d1 = int(gen.integers(1, 7))
    n = int(gen.integers(1, 51))
    f = FactorPair(gen.standard_normal((d2, d1)), gen.standard_normal((d0, d1)))
    y = gen.standard_normal(n)
    if indicator:
        s = SensingSample.indicator(gen.integers(0, d2, n), gen.integers(0, d0, n), y, (d2, d0))
    else:
        s = SensingSample.from_dense(gen.standard_normal((n, d2, d0)), y)
    return f, s, DropoutConfig(float(gen.choice(rates)))


def _random_relu_instance(
    gen: np.random.Generator, rates: Sequence[float]
) -> tuple[TwoLayerNet, LabeledSet, DropoutConfig]:
    d0, d1 = gen.integers(1, 9, size=2)
    d2 = int(gen.integers(1, 4))
    n = int(gen.integers(1, 51))
    net = TwoLayerNet(gen.standard_normal((d2, d1)), gen.standard_normal((d0, d1)))
    data = LabeledSet(gen.standard_normal((d0, n)), gen.uniform(-1.0, 1.0, (d2, n)))
    return net, data, DropoutConfig(float(gen.choice(rates)))


def _identity_checks(
    name: str,
    instances: list[tuple[object, object, DropoutConfig]],
    closed_form: Callable[[object, object, DropoutConfig], float],
    monte_carlo: Callable[[object, object, DropoutConfig, int, SeededRng], tuple[float, float]],
    exact: Callable[[object, object, DropoutConfig], float],
    trials: int,
    root: SeededRng,
) -> list[AuditCheck]:
    mc_passes = exact_passes = 0
    mc_worst = exact_worst = 0.0
    for index, (model, data, d) in enumerate(instances):
        target = closed_form(model, data, d)
        mean, stderr = monte_carlo(model, data, d, trials, root.spawn(index))
        z = abs(mean - target) / stderr if stderr > 0 else (0.0 if mean == target else math.inf)
        mc_worst = max(mc_worst, z)
        mc_passes += z <= 3.0
        deviation = abs(exact(model, data, d) - target) / (1.0 + abs(target))
        exact_worst = max(exact_worst, deviation)
        exact_passes += deviation <= 1e-9
    total = len(instances)
    return [
        AuditCheck(
            name=f"{name}-mc-identity",
            passes=mc_passes,
            total=total,
            required=math.ceil(0.96 * total),
            worst=mc_worst,
            description="Monte-Carlo dropout objective within 3 standard errors of L̂ + R̂",
        ),
        AuditCheck(
            name=f"{name}-exact-identity",
            passes=exact_passes,
            total=total,
            required=total,
            worst=exact_worst,
            description="mask enumeration equals L̂ + R̂ to 1e-9 relative",
        ),
    ]


def _induced_check(
    root: SeededRng, instances: int, gd_steps: int
) -> list[AuditCheck]:
    gen = root.generator()
    attain = beat = 0
    attain_worst = beat_worst = 0.0
    for index in range(instances):
        d2, d0 = (int(value) for value in gen.integers(1, 6, size=2))
        rank = int(gen.integers(1, min(d2, d0) + 1))
        d1 = rank + 2
        m = gen.standard_normal((d2, rank)) @ gen.standard_normal((d0, rank)).T
        for model in (
            MeasurementModel.indicator(
                0.8 * gen.dirichlet(np.ones(d2)) + 0.2 / d2,
                0.8 * gen.dirichlet(np.ones(d0)) + 0.2 / d0,
            ),
            MeasurementModel.gaussian(d2, d0),
        ):
            theta = induced_regularizer(m, model, d1)
            equalized = equalized_minimizer(m, model, d1)
            gap = abs(expected_regularizer(equalized, model) - theta)
            gap = max(gap, float(np.abs(equalized.product() - m).max()))
            attain_worst = max(attain_worst, gap)
            attain += gap <= 1e-8 * (1.0 + theta)
            descent = minimize_induced_regularizer(m, model, d1, root.spawn(index), steps=gd_steps)
            undercut = theta - expected_regularizer(descent, model)
            beat_worst = max(beat_worst, undercut)
            beat += undercut <= 1e-6
    total = 2 * instances
    return [
        AuditCheck(
            name="induced-regularizer-attained",
            passes=attain,
            total=total,
            required=total,
            worst=attain_worst,
            description="equalized factorization attains the weighted trace-norm value",
        ),
        AuditCheck(
            name="induced-regularizer-minimal",
            passes=beat,
            total=total,
            required=total,
            worst=beat_worst,
            description="gradient descent never beats the closed form by more than 1e-6",
        ),
    ]


def _isotropy_check(
    root: SeededRng, rates: Sequence[float], instances: int, samples: int, perturbation: float
) -> AuditCheck:
    gen = root.generator()
    passes = 0
    worst = 0.0
    for index in range(instances):
        d0, d1 = (int(value) for value in gen.integers(1, 9, size=2))
        d2 = int(gen.integers(1, 4))
        net = TwoLayerNet(gen.standard_normal((d2, d1)), gen.standard_normal((d0, d1)))
        d = DropoutConfig(float(gen.choice(rates)))
        check = isotropy_regularizer_check(
            net, standard_gaussian_sampler(d0), samples, d, root.spawn(index)
        )
        diff = abs(check.lhs - perturbation * check.rhs)
        z = diff / check.stderr if check.stderr > 0 else (0.0 if diff == 0 else math.inf)
        worst = max(worst, z)
        passes += z <= 3.0
    return AuditCheck(
        name="path-norm-isotropy",
        passes=passes,
        total=instances,
        required=math.ceil(0.95 * instances),
        worst=worst,
        description="Gaussian-input regularizer within 3 standard errors of (λ/2)·path-norm²",
    )


def _central_difference(
    objective: Callable[[np.ndarray, np.ndarray], float], u: np.ndarray, v: np.ndarray, step: float
) -> tuple[np.ndarray, np.ndarray]:
    grads = []
    for target in (u, v):
        grad = np.zeros_like(target)
        for index in np.ndindex(target.shape):
            original = target[index]
            target[index] = original + step
            upper = objective(u, v)
            target[index] = original - step
            lower = objective(u, v)
            target[index] = original
            grad[index] = (upper - lower) / (2.0 * step)
        grads.append(grad)
    return grads[0], grads[1]


def _relative_error(analytic: tuple[np.ndarray, ...], numeric: tuple[np.ndarray, ...]) -> float:
    a = np.concatenate([part.ravel() for part in analytic])
    b = np.concatenate([part.ravel() for part in numeric])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _gradient_checks(
    root: SeededRng, rates: Sequence[float], points: int, perturbation: float, step: float = 1e-5
) -> list[AuditCheck]:
    gen = root.generator()
    results = {"sensing": [], "relu": []}
    for index in range(points):
        f, s, d = _random_sensing_instance(gen, rates, indicator=bool(index % 2))
        lam = d.lam * perturbation

        def sensing_objective(u: np.ndarray, v: np.ndarray) -> float:
            pair = FactorPair(u, v)
            return erm_loss(pair, s) + lam * explicit_regularizer(pair, s)

        numeric = _central_difference(sensing_objective, np.array(f.u), np.array(f.v), step)
        results["sensing"].append(_relative_error(explicit_penalty_gradient(f, s, d), numeric))

        net, data, d = _random_relu_instance(gen, rates)
        while np.abs(net.v.T @ data.inputs).min() <= 1e-3:
            net, data, d = _random_relu_instance(gen, rates)
        scale = perturbation

        def relu_objective(u: np.ndarray, v: np.ndarray) -> float:
            candidate = TwoLayerNet(u, v)
            return erm_loss_relu(candidate, data) + scale * explicit_regularizer_relu(candidate, data, d)

        numeric = _central_difference(relu_objective, np.array(net.u), np.array(net.v), step)
        results["relu"].append(_relative_error(explicit_penalty_gradient_relu(net, data, d), numeric))

    return [
        AuditCheck(
            name=f"{name}-gradient",
            passes=sum(error < 1e-5 for error in errors),
            total=len(errors),
            required=len(errors),
            worst=max(errors, default=0.0),
            description="explicit-penalty gradient matches central differences (rel. < 1e-5)",
        )
        for name, errors in results.items()
    ]


def _concentration_check(root: SeededRng, resamples: int) -> AuditCheck:
    gen = root.generator()
    f = FactorPair(gen.standard_normal((6, 3)), gen.standard_normal((5, 3)))
    rows = concentration_audit(f, MeasurementModel.uniform(6, 5), (100, 1_000, 10_000), resamples, root.spawn(0))
    scaled = [row.scaled for row in rows]
    ratio = max(scaled) / min(scaled) if min(scaled) > 0 else math.inf
    return AuditCheck(
        name="regularizer-concentration",
        passes=int(ratio < 3.0),
        total=1,
        required=1,
        worst=ratio,
        description="√n·|R̂ − R| varies by less than 3x over n ∈ {1e2, 1e3, 1e4}",
    )


def _construction_checks(root: SeededRng) -> list[AuditCheck]:
    worst = 0.0
    passes = 0
    for delta in (0.25, 0.01):
        dist, w = counterexample_distribution(delta)
        error = max(
            abs(dist.expect(lambda x: relu(w @ x) ** 2) - 1.0),
            abs(float(np.linalg.norm(w)) - 1.0 / math.sqrt(delta)),
            float(np.abs(np.linalg.norm(dist.atoms, axis=0) - 1.0).max()),
            float(np.abs(dist.mean()).max()),
        )
        worst = max(worst, error)
        passes += error <= 1e-12
    counterexample = AuditCheck(
        name="retention-counterexample",
        passes=passes,
        total=2,
        required=2,
        worst=worst,
        description="unit-sphere atoms with E σ(wᵀx)² = 1 while ‖w‖ = 1/√δ",
    )

    gen = root.generator()
    worst = 0.0
    passes = 0
    for _ in range(10):
        d0 = int(gen.integers(1, 9))
        d1 = 2 * int(gen.integers(1, 9))
        w = gen.standard_normal(d0)
        x = gen.standard_normal((d0, 100))
        net = lower_bound_embedding(w, d1)
        hidden = relu(net.v.T @ x)
        reg = float(net.u[0] ** 2 @ np.mean(hidden**2, axis=1))
        linear = w @ x
        error = max(
            float(np.abs(forward(net, x)[0] - linear).max()) / (1.0 + np.abs(linear).max()),
            abs(reg - 2.0 / d1 * float(np.mean(linear**2))) / (1.0 + reg),
        )
        worst = max(worst, error)
        passes += error <= 1e-12
    embedding = AuditCheck(
        name="linear-embedding",
        passes=passes,
        total=10,
        required=10,
        worst=worst,
        description="width-d1 embedding reproduces wᵀx and (2/d1)·Ê(wᵀx)²",
    )
    return [counterexample, embedding]


def run_audit(
    seed: int = 0,
    *,
    rates: Sequence[float] = AUDIT_RATES,
    lambda_perturbation: float = 1.0,
    instances: int = 50,
    mc_trials: int = 100_000,
    induced_instances: int = 20,
    gd_steps: int = 10_000,
    isotropy_instances: int = 20,
    isotropy_samples: int = 1_000_000,
    gradient_points: int = 100,
    concentration_resamples: int = 100,
) -> AuditReport:
    """Run every oracle cross-check from one seed.

    lambda_perturbation multiplies λ on the closed-form side of the
    identities; any value other than 1 should make the identity checks fail.
    """
    if not rates:
        raise InvalidArgumentError("audit needs at least one dropout rate")
    root = SeededRng(seed)

    def closed_sensing(f: FactorPair, s: SensingSample, d: DropoutConfig) -> float:
        return erm_loss(f, s) + lambda_perturbation * d.lam * explicit_regularizer(f, s)

    def closed_relu(net: TwoLayerNet, data: LabeledSet, d: DropoutConfig) -> float:
        return erm_loss_relu(net, data) + lambda_perturbation * explicit_regularizer_relu(net, data, d)

    sensing_gen = root.spawn(_STREAMS["sensing"]).generator()
    relu_gen = root.spawn(_STREAMS["relu"]).generator()
    report = AuditReport(seed=seed)
    report.checks.extend(
        _identity_checks(
            "sensing",
            [_random_sensing_instance(sensing_gen, rates, bool(k % 2)) for k in range(instances)],
            closed_sensing,
            dropout_objective_mc,
            dropout_objective_exact,
            mc_trials,
            root.spawn(_STREAMS["sensing"]),
        )
    )
    report.checks.extend(
        _identity_checks(
            "relu",
            [_random_relu_instance(relu_gen, rates) for _ in range(instances)],
            closed_relu,
            dropout_objective_mc_relu,
            dropout_objective_exact_relu,
            mc_trials,
            root.spawn(_STREAMS["relu"]),
        )
    )
    report.checks.extend(_induced_check(root.spawn(_STREAMS["induced"]), induced_instances, gd_steps))
    report.checks.append(
        _isotropy_check(
            root.spawn(_STREAMS["isotropy"]), rates, isotropy_instances, isotropy_samples, lambda_perturbation
        )
    )
    report.checks.extend(
        _gradient_checks(root.spawn(_STREAMS["gradient"]), rates, gradient_points, lambda_perturbation)
    )
    report.checks.append(_concentration_check(root.spawn(_STREAMS["concentration"]), concentration_resamples))
    report.checks.extend(_construction_checks(root))

    for check in report.checks:
        _LOGGER.debug("%s: %d/%d (worst %.3g)", check.name, check.passes, check.total, check.worst)
    if not report.passed:
        _LOGGER.error("Audit failed: %s", ", ".join(report.failures))
    return report


@dataclass(frozen=True, kw_only=True)
class BoundRow:
    """Evaluated bounds for one measured-quantities row."""

    run_id: str
    task: str
    train_loss: float
    bounds: dict[str, float]
    violations: tuple[str, ...]


_REQUIRED = {
    TASK_MC: (),
    TASK_RELU: ("beta", "x_mahal", "rank_c"),
    TASK_RELU_SYM: ("x_mahal", "rank_c"),
}


def _bounds_for(q: BoundQuantities, delta: float, k_const: float) -> tuple[dict[str, float], list[str]]:
    if q.task == TASK_MC:
        bounds = {
            "completion": gen_bound_mc(q.train_loss, q.alpha, q.d2, q.n, delta),
            "optimistic": gen_bound_optimistic(q.alpha, q.d2, q.n, delta, k_const),
        }
        return bounds, sensing_bound_preconditions(q.d2, q.d0, q.n, q.min_pq, q.spectral_norm)
    if q.task == TASK_RELU:
        return {
            "rademacher": rademacher_bound(q.alpha, q.beta, q.x_mahal, q.n),
            "rademacher_expected": rademacher_bound_expected(q.alpha, q.beta, q.rank_c, q.n),
            "regression": gen_bound_regression(q.train_loss, q.alpha, q.beta, q.x_mahal, q.n, delta),
            "classification": gen_bound_classification(q.train_loss, q.alpha, q.beta, q.x_mahal, q.n, delta),
        }, []
    return {
        "rademacher": rademacher_bound(q.alpha, 0.5, q.x_mahal, q.n),
        "rademacher_expected": rademacher_bound_expected(q.alpha, 0.5, q.rank_c, q.n),
        "symmetrized": gen_bound_symmetrized(q.train_loss, q.alpha, q.x_mahal, q.n, delta),
        "classification": gen_bound_classification(
            q.train_loss, q.alpha, None, q.x_mahal, q.n, delta, symmetrized=True
        ),
    }, []


def evaluate_bounds(
    quantities: Sequence[BoundQuantities], delta: float, k_const: float = DEFAULT_K_CONST
) -> list[BoundRow]:
    """Evaluate every applicable bound per row and flag violated preconditions."""
    rows = []
    for q in quantities:
        violations: list[str] = []
        bounds: dict[str, float] = {}
        if q.task not in _REQUIRED:
            violations.append(f"unknown task {q.task}")
        else:
            violations.extend(
                f"missing {name}" for name in _REQUIRED[q.task] if getattr(q, name) is None
            )
        if not violations:
            try:
                bounds, failed = _bounds_for(q, delta, k_const)
                violations.extend(failed)
            except InvalidArgumentError as err:
                violations.append(str(err))
        if violations:
            _LOGGER.warning("Run %s: %s", q.run_id, "; ".join(violations))
        rows.append(
            BoundRow(
                run_id=q.run_id,
                task=q.task,
                train_loss=q.train_loss,
                bounds=bounds,
                violations=tuple(violations),
            )
        )
    return rows


def render_audit(report: AuditReport, console: Console) -> None:
    """Print the audit as a table."""
    table = Table(title=f"Audit (seed {report.seed})")
    table.add_column("check")
    table.add_column("passed", justify="right")
    table.add_column("worst", justify="right")
    table.add_column("status")
    table.add_column("description")
    for check in report.checks:
        table.add_row(
            check.name,
            f"{check.passes}/{check.total}",
            f"{check.worst:.3g}",
            "[green]ok[/green]" if check.passed else "[red]FAIL[/red]",
            check.description,
        )
    console.print(table)


def render_bounds(rows: Sequence[BoundRow], console: Console) -> None:
    """Print one table row per bound evaluation."""
    table = Table(title="Generalization bounds")
    for column in ("run", "task", "train loss", "bound", "value", "violations"):
        table.add_column(column)
    for row in rows:
        flags = ", ".join(row.violations)
        if not row.bounds:
            table.add_row(row.run_id, row.task, f"{row.train_loss:.5g}", "-", "-", flags)
        for name, value in row.bounds.items():
            table.add_row(row.run_id, row.task, f"{row.train_loss:.5g}", name, f"{value:.5g}", flags)
    console.print(table)


def render_summary(outcomes: Sequence[RunOutcome], console: Console) -> None:
    """Print best and last test loss, gap and co-adaptation per run."""
    table = Table(title="Runs")
    for column in ("run", "best test", "last test", "gap", "phi", "complexity", "status"):
        table.add_column(column)
    for outcome in outcomes:
        last = outcome.last
        table.add_row(
            outcome.run_id,
            f"{outcome.best_test:.5g}",
            f"{last.test_loss:.5g}" if last else "-",
            f"{last.gap:.5g}" if last else "-",
            f"{last.phi:.4g}" if last else "-",
            f"{outcome.complexity:.4g}",
            "[red]diverged[/red]" if outcome.diverged else "ok",
        )
    console.print(table)
