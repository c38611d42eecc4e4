"""Dense linear algebra and seeded randomness.

Singular values come from a one-sided (Hestenes) Jacobi iteration; each sweep
visits every column pair once using a round-robin schedule, so the pairs of a
round are disjoint and can be rotated together.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import JACOBI_MAX_SWEEPS, PINV_TOL, PSD_TOL, RANK_TOL
from .exceptions import (
    InvalidArgumentError,
    NonFiniteError,
    NotPositiveSemidefiniteError,
    ShapeError,
)

_LOGGER = logging.getLogger(__name__)

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]

_EPS: float = float(np.finfo(np.float64).eps)
_UINT64_LIMIT = 1 << 64


def as_matrix(value: ArrayLike, name: str = "matrix") -> Matrix:
    """Return value as a finite float64 2-D array."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def as_vector(value: ArrayLike, name: str = "vector") -> Vector:
    """Return value as a finite float64 1-D array."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def frozen(arr: NDArray[Any]) -> NDArray[Any]:
    """Return a read-only copy of arr."""
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SvdResult:
    """Thin singular value decomposition left·diag(σ)·rightᵀ."""

    left: Matrix
    singular_values: Vector
    right: Matrix

    def reconstruct(self) -> Matrix:
        """Return left·diag(σ)·rightᵀ."""
        return (self.left * self.singular_values) @ self.right.T


@lru_cache(maxsize=64)
def _round_robin(count: int) -> tuple[tuple[NDArray[np.intp], NDArray[np.intp]], ...]:
    """Pairings covering every column pair once per sweep (circle method)."""
    players = list(range(count)) + ([-1] if count % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [
            (min(players[i], players[size - 1 - i]), max(players[i], players[size - 1 - i]))
            for i in range(size // 2)
            if players[i] >= 0 and players[size - 1 - i] >= 0
        ]
        if pairs:
            first, second = zip(*pairs)
            rounds.append((np.array(first, dtype=np.intp), np.array(second, dtype=np.intp)))
        players = [players[0], players[-1], *players[1:-1]]
    return tuple(rounds)


def _one_sided_jacobi(a: Matrix) -> tuple[Matrix, Matrix]:
    """Orthogonalize the columns of a; return (a·W, W) with W orthogonal."""
    work = a.copy()
    cols = work.shape[1]
    rotation = np.eye(cols)
    rounds = _round_robin(cols)
    rel_tol = 10.0 * max(work.shape) * _EPS

    for sweep in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for first, second in rounds:
            wp = work[:, first]
            wq = work[:, second]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(gamma) > rel_tol * np.sqrt(alpha * beta)
            if not np.any(active):
                continue
            rotated = True
            p, q = first[active], second[active]
            zeta = (beta[active] - alpha[active]) / (2.0 * gamma[active])
            sign = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for target in (work, rotation):
                tp = target[:, p]
                tq = target[:, q]
                target[:, p] = c * tp - s * tq
                target[:, q] = s * tp + c * tq
        if not rotated:
            _LOGGER.debug("Jacobi converged after %d sweeps", sweep + 1)
            return work, rotation

    _LOGGER.warning("Jacobi SVD hit the sweep cap (%d) on a %s matrix", JACOBI_MAX_SWEEPS, a.shape)
    return work, rotation


def _complete_orthonormal(basis: Matrix, count: int) -> Matrix:
    """Extend orthonormal columns of basis to count orthonormal columns."""
    rows, known = basis.shape
    if known >= count:
        return basis[:, :count]
    q, _ = np.linalg.qr(np.hstack([basis, np.eye(rows)]))
    return np.hstack([basis, q[:, known:count]])


def svd(m: ArrayLike) -> SvdResult:
    """Return the thin SVD of m with non-increasing singular values."""
    a = as_matrix(m)
    rows, cols = a.shape
    if min(rows, cols) < 1:
        raise ShapeError(f"svd needs a non-empty matrix, got shape {a.shape}")
    if rows < cols:
        transposed = svd(a.T)
        return SvdResult(
            left=transposed.right,
            singular_values=transposed.singular_values,
            right=transposed.left,
        )

    work, rotation = _one_sided_jacobi(a)
    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    rotation = rotation[:, order]

    cutoff = sigma[0] * rows * _EPS
    kept = int(np.count_nonzero(sigma > cutoff)) if sigma[0] > 0.0 else 0
    left = work[:, :kept] / sigma[:kept]
    left = _complete_orthonormal(left, cols)
    return SvdResult(left=left, singular_values=sigma, right=rotation)


def nuclear_norm(m: ArrayLike) -> float:
    """Return ‖m‖_*, the sum of singular values."""
    return float(np.sum(svd(m).singular_values))


def spectral_norm(m: ArrayLike) -> float:
    """Return ‖m‖, the largest singular value."""
    return float(svd(m).singular_values[0])


def numerical_rank(m: ArrayLike, tol: float = RANK_TOL) -> int:
    """Count singular values above tol·σ₁."""
    sigma = svd(m).singular_values
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > tol * sigma[0]))


def pseudo_inverse(m: ArrayLike, tol: float = PINV_TOL) -> Matrix:
    """Return the Moore-Penrose pseudo-inverse of m.

    Args:
        m: Matrix to invert.
        tol: Singular values at or below tol·σ₁ are treated as zero.
    """
    if tol < 0:
        raise InvalidArgumentError(f"tol must be non-negative, got {tol}")
    a = as_matrix(m)
    result = svd(a)
    sigma = result.singular_values
    if sigma[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = sigma > tol * sigma[0]
    return (result.right[:, keep] / sigma[keep]) @ result.left[:, keep].T


def second_moment(x: ArrayLike) -> Matrix:
    """Return the empirical second moment (1/n)·X·Xᵀ of the columns of x."""
    data = as_matrix(x, "x")
    if data.shape[1] < 1:
        raise ShapeError("second moment needs at least one column")
    return data @ data.T / data.shape[1]


def mahalanobis_data_norm(x: ArrayLike, c_pinv: ArrayLike) -> float:
    """Return ‖X‖_{C†} = sqrt(Σᵢ xᵢᵀ·C†·xᵢ) over the columns of x."""
    data = as_matrix(x, "x")
    weight = as_matrix(c_pinv, "c_pinv")
    dim = data.shape[0]
    if weight.shape != (dim, dim):
        raise ShapeError(f"c_pinv must be {dim}x{dim}, got {weight.shape}")
    if weight.size and np.max(np.abs(weight - weight.T)) > PSD_TOL * max(1.0, np.max(np.abs(weight))):
        raise NotPositiveSemidefiniteError("c_pinv is not symmetric")

    forms = np.einsum("in,ij,jn->n", data, weight, data)
    if forms.size and forms.min() < -PSD_TOL:
        raise NotPositiveSemidefiniteError(
            f"negative quadratic form {forms.min():.3e}; c_pinv is not PSD"
        )
    return float(np.sqrt(np.clip(forms, 0.0, None).sum()))


def givens_rotation(dim: int, i: int, j: int, theta: float) -> Matrix:
    """Return the rotation acting on the (i, j) plane by angle theta."""
    g = np.eye(dim)
    c, s = np.cos(theta), np.sin(theta)
    g[i, i] = c
    g[j, j] = c
    g[i, j] = s
    g[j, i] = -s
    return g


def equal_diagonal_rotation(sigma: ArrayLike) -> Matrix:
    """Return an orthogonal Q with every diagonal entry of QᵀΣQ equal to tr(Σ)/d.

    Each step rotates the largest and smallest unpinned diagonal entries in
    their plane by the angle that lands the larger one exactly on the mean,
    then pins it. The unpinned entries keep averaging to the mean, so d-1
    rotations suffice.
    """
    values = as_vector(sigma, "sigma")
    dim = values.size
    if dim < 1:
        raise ShapeError("sigma must have at least one entry")
    if np.any(values < 0):
        raise InvalidArgumentError("sigma entries must be non-negative")

    target = values.sum() / dim
    tol = 1e-13 * max(values.sum(), np.finfo(np.float64).tiny)
    s = np.diag(values)
    q = np.eye(dim)
    free = np.ones(dim, dtype=bool)

    for _ in range(dim - 1):
        diag = np.diag(s)
        idx = np.flatnonzero(free)
        hi = int(idx[np.argmax(diag[idx])])
        lo = int(idx[np.argmin(diag[idx])])
        if diag[hi] - target <= tol and target - diag[lo] <= tol:
            break
        a, b, off = s[hi, hi], s[lo, lo], s[hi, lo]
        half = 0.5 * (a - b)
        radius = np.hypot(half, off)
        phase = np.arctan2(off, half)
        cos2 = np.clip((target - 0.5 * (a + b)) / radius, -1.0, 1.0)
        theta = 0.5 * (np.arccos(cos2) - phase)
        g = givens_rotation(dim, hi, lo, theta)
        s = g.T @ s @ g
        q = q @ g
        free[hi] = False

    return q


@dataclass(frozen=True)
class SeededRng:
    """Seed and stream identifying a reproducible counter-based random stream."""

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        """Validate the seed and stream range."""
        for name, value in (("seed", self.seed), ("stream", self.stream)):
            if not 0 <= int(value) < _UINT64_LIMIT:
                raise InvalidArgumentError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self) -> np.random.Generator:
        """Return a fresh numpy Generator positioned at the start of the stream."""
        sequence = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(sequence))

    def spawn(self, index: int) -> SeededRng:
        """Return the child stream for index; independent of call order."""
        sequence = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream), int(index))
        )
        child = int(sequence.generate_state(1, dtype=np.uint64)[0])
        return SeededRng(int(self.seed), child)


RngLike = SeededRng | np.random.Generator


def as_generator(rng: RngLike) -> np.random.Generator:
    """Return a numpy Generator for rng."""
    if isinstance(rng, SeededRng):
        return rng.generator()
    return rng


def as_seeded(rng: RngLike) -> SeededRng:
    """Return a SeededRng for rng, drawing a seed from a plain Generator."""
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(int(rng.integers(0, 2**63)))


def rademacher(gen: np.random.Generator, size: int | tuple[int, ...]) -> NDArray[np.float64]:
    """Draw i.i.d. ±1 signs."""
    return gen.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
