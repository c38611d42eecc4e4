"""Constants for the dropout capacity package."""
from __future__ import annotations

from typing import Final

# Tasks
TASK_MC: Final = "mc"
TASK_RELU: Final = "relu"

# Training modes
MODE_MASK: Final = "mask"
MODE_PENALTY: Final = "penalty"

# Measurement models
MODEL_GAUSSIAN: Final = "gaussian"
MODEL_INDICATOR: Final = "indicator"

# Input distributions for planted teachers
INPUT_GAUSSIAN: Final = "gaussian"
INPUT_FOLDED: Final = "folded-gaussian"

# Data sources
DATA_SYNTHETIC: Final = "synthetic"
DATA_MOVIELENS: Final = "movielens"
DATA_MNIST: Final = "mnist"

# Config keys
CONF_TASK: Final = "task"
CONF_DATA: Final = "data"
CONF_WIDTHS: Final = "widths"
CONF_RATES: Final = "rates"
CONF_LR: Final = "lr"
CONF_BATCH: Final = "batch_size"
CONF_EPOCHS: Final = "epochs"
CONF_SEEDS: Final = "seeds"
CONF_MODE: Final = "mode"
CONF_SYMMETRIZE: Final = "symmetrize"
CONF_OUT: Final = "out"
CONF_DELTA: Final = "delta"
CONF_ROWS: Final = "rows"
CONF_COLS: Final = "cols"
CONF_RANK: Final = "rank"
CONF_OBSERVED: Final = "observed_fraction"
CONF_NOISE: Final = "noise_std"
CONF_INPUT_DIM: Final = "input_dim"
CONF_TEACHER_WIDTH: Final = "teacher_width"
CONF_N_TRAIN: Final = "n_train"
CONF_N_TEST: Final = "n_test"
CONF_INPUT_DIST: Final = "input_dist"
CONF_TEST_FRACTION: Final = "test_fraction"
CONF_CLASSES: Final = "classes"
CONF_BETA_DIRS: Final = "beta_dirs"
CONF_WORKERS: Final = "workers"
CONF_K_CONST: Final = "k_const"

# Defaults
DEFAULT_SEEDS: Final = tuple(range(20))
DEFAULT_MODE: Final = MODE_MASK
DEFAULT_DELTA: Final = 0.05
DEFAULT_K_CONST: Final = 1.0
DEFAULT_BETA_DIRS: Final = 512
DEFAULT_WORKERS: Final = 1
DEFAULT_TEST_FRACTION: Final = 0.1
DEFAULT_CLASSES: Final = (4, 7)
DEFAULT_OUT: Final = "metrics.csv"
DEFAULT_SYMMETRIZED_RESAMPLES: Final = 8

# Per-task defaults applied after validation
TASK_DEFAULTS: Final = {
    TASK_MC: {
        CONF_LR: 1.0,
        CONF_BATCH: 2000,
        CONF_EPOCHS: 100,
        CONF_WIDTHS: (20,),
        CONF_RATES: (0.0, 0.1, 0.2, 0.3),
        CONF_ROWS: 100,
        CONF_COLS: 80,
        CONF_RANK: 3,
        CONF_OBSERVED: 0.4,
        CONF_NOISE: 0.5,
    },
    TASK_RELU: {
        CONF_LR: 5e-3,
        CONF_BATCH: 20,
        CONF_EPOCHS: 300,
        CONF_WIDTHS: (32, 128),
        CONF_RATES: (0.0, 0.25, 0.5),
        CONF_INPUT_DIM: 20,
        CONF_TEACHER_WIDTH: 4,
        CONF_N_TRAIN: 200,
        CONF_N_TEST: 2000,
        CONF_INPUT_DIST: INPUT_GAUSSIAN,
        CONF_NOISE: 0.3,
    },
}

# Numerical tolerances
PINV_TOL: Final = 1e-12
RANK_TOL: Final = 1e-12
COVARIANCE_RANK_TOL: Final = 1e-10
JACOBI_MAX_SWEEPS: Final = 80
PSD_TOL: Final = 1e-9
SIMPLEX_TOL: Final = 1e-12
BETA_MIN_ENERGY: Final = 1e-12
DIVERGENCE_LIMIT: Final = 1e6
MC_CHUNK: Final = 10_000
MAX_EXACT_MASK_WIDTH: Final = 16

# Exit codes
EXIT_OK: Final = 0
EXIT_CONFIG: Final = 1
EXIT_CHECK: Final = 2
EXIT_DIVERGED: Final = 3

# IDX format (big-endian magic: two zero bytes, type 0x08, dimension count)
IDX_MAGIC_IMAGES: Final = 0x00000803
IDX_MAGIC_LABELS: Final = 0x00000801
IDX_PIXEL_SCALE: Final = 255.0

# MovieLens format
MOVIELENS_DELIMITER: Final = "::"
MOVIELENS_FIELDS: Final = 4

# Metrics CSV
RECORD_HEADER: Final = (
    "run_id",
    "epoch",
    "dropout_rate",
    "width",
    "train_loss",
    "test_loss",
    "gap",
    "reg_value",
    "alpha_hat",
    "beta_hat",
    "phi",
    "seed",
)
QUANTITY_HEADER: Final = (
    "run_id",
    "task",
    "train_loss",
    "alpha",
    "beta",
    "x_mahal",
    "rank_c",
    "n",
    "d2",
    "d0",
    "min_pq",
    "spectral_norm",
)
FLOAT_FORMAT: Final = ".17g"
