"""Fixtures for dropout capacity tests."""
from __future__ import annotations

import struct
from collections.abc import Generator
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from dropout_capacity.const import IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS
from dropout_capacity.coordinator import RunJob, RunOutcome
from dropout_capacity.records import BoundQuantities, ExperimentRecord
from dropout_capacity.relunet import LabeledSet, TwoLayerNet
from dropout_capacity.sensing import FactorPair, SensingSample


@pytest.fixture
def gen() -> np.random.Generator:
    """Deterministic numpy generator."""
    return np.random.default_rng(20240617)


@pytest.fixture
def factor_pair(gen: np.random.Generator) -> FactorPair:
    """Random 4×3 factorization of width 3."""
    return FactorPair(gen.standard_normal((4, 3)), gen.standard_normal((3, 3)))


@pytest.fixture
def indicator_sample(gen: np.random.Generator) -> SensingSample:
    """Thirty indicator measurements of a 4×3 matrix."""
    n = 30
    return SensingSample.indicator(
        gen.integers(0, 4, n), gen.integers(0, 3, n), gen.standard_normal(n), (4, 3)
    )


@pytest.fixture
def dense_sample(gen: np.random.Generator) -> SensingSample:
    """Twenty Gaussian measurements of a 4×3 matrix."""
    n = 20
    return SensingSample.from_dense(gen.standard_normal((n, 4, 3)), gen.standard_normal(n))


@pytest.fixture
def net(gen: np.random.Generator) -> TwoLayerNet:
    """Single-output ReLU network with d0=5, d1=4."""
    return TwoLayerNet(gen.standard_normal((1, 4)), gen.standard_normal((5, 4)))


@pytest.fixture
def labeled(gen: np.random.Generator) -> LabeledSet:
    """Forty Gaussian inputs in five dimensions with targets in [-1, 1]."""
    return LabeledSet(gen.standard_normal((5, 40)), gen.uniform(-1.0, 1.0, 40))


def idx_bytes(magic: int, dims: tuple[int, ...], payload: bytes) -> bytes:
    """Encode an IDX file."""
    return struct.pack(f">I{len(dims)}I", magic, *dims) + payload


@pytest.fixture
def idx_files(tmp_path: Path) -> tuple[Path, Path]:
    """Two 28×28 images labelled 4 and 7; the first image is all 255."""
    images = tmp_path / "images-idx3-ubyte"
    labels = tmp_path / "labels-idx1-ubyte"
    pixels = bytes([255] * 784) + bytes(range(256)) * 3 + bytes(16)
    images.write_bytes(idx_bytes(IDX_MAGIC_IMAGES, (2, 28, 28), pixels))
    labels.write_bytes(idx_bytes(IDX_MAGIC_LABELS, (2,), bytes([4, 7])))
    return images, labels


@pytest.fixture
def movielens_file(tmp_path: Path) -> Path:
    """Three ratings by two users."""
    path = tmp_path / "ratings.dat"
    path.write_text("10::100::5::978300760\n10::200::3::978302109\n20::100::4::978301968\n")
    return path


def make_record(**overrides: object) -> ExperimentRecord:
    """Record with plausible defaults."""
    values: dict[str, object] = {
        "run_id": "mc-0123456789-s0-p0.1-w3",
        "epoch": 1,
        "dropout_rate": 0.1,
        "width": 3,
        "train_loss": 0.5,
        "test_loss": 0.75,
        "gap": 0.25,
        "reg_value": 0.125,
        "alpha_hat": 0.375,
        "seed": 0,
    }
    values.update(overrides)
    return ExperimentRecord(**values)


@pytest.fixture
def mock_runner() -> Generator[MagicMock, None, None]:
    """Patch the completion runner with one that returns canned outcomes."""
    with patch("dropout_capacity.coordinator.CompletionRunner", autospec=True) as mock:
        runner = mock.return_value

        def run(job: RunJob) -> RunOutcome:
            run_id = f"mc-test-s{job.seed}-p{job.rate:g}-w{job.width}"
            records = [
                make_record(run_id=run_id, epoch=epoch, dropout_rate=job.rate, width=job.width, seed=job.seed)
                for epoch in (1, 2)
            ]
            quantities = BoundQuantities(
                run_id=run_id, task="mc", train_loss=0.5, alpha=0.4, n=100, d2=10, d0=8
            )
            return RunOutcome(job=job, run_id=run_id, records=records, quantities=quantities)

        runner.run.side_effect = run
        yield runner
