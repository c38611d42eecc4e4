"""Data sources for dropout experiments."""
from .idx import load_binary_pair, parse_idx, parse_idx_bytes
from .movielens import RatingsData, parse_movielens
from .storage import read_quantities, read_records, write_quantities, write_records
from .synthetic import (
    CompletionTask,
    RegressionTask,
    gen_low_rank,
    gen_planted_teacher,
    make_completion_task,
    sample_indicator_observations,
    split,
)

__all__ = [
    "CompletionTask",
    "RatingsData",
    "RegressionTask",
    "gen_low_rank",
    "gen_planted_teacher",
    "load_binary_pair",
    "make_completion_task",
    "parse_idx",
    "parse_idx_bytes",
    "parse_movielens",
    "read_quantities",
    "read_records",
    "sample_indicator_observations",
    "split",
    "write_quantities",
    "write_records",
]
