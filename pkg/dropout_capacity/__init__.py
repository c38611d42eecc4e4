"""Dropout as a capacity control for matrix completion and two-layer ReLU networks."""
from __future__ import annotations

from .config import RunConfig, build_config
from .coordinator import ExperimentCoordinator, RunOutcome
from .exceptions import DropoutCapacityError
from .sensing import DropoutConfig, SgdSchedule, TrainMode

__version__ = "1.0.0"

__all__ = [
    "DropoutCapacityError",
    "DropoutConfig",
    "ExperimentCoordinator",
    "RunConfig",
    "RunOutcome",
    "SgdSchedule",
    "TrainMode",
    "__version__",
    "build_config",
]
