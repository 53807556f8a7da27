"""
FSCIL Constants - Centralized numeric tolerances, file names and registries.

This module contains the hardcoded values shared by the numeric core, the
training phases, the analyses and the command-line front end.
"""

from typing import Dict, Tuple

# =============================================================================
# NUMERIC TOLERANCES
# =============================================================================

# Vectors with a norm at or below this value cannot be normalized
NORM_EPS = 1e-12

# Denominator floor of the relative error used by gradcheck
GRADCHECK_DENOM_FLOOR = 1e-8

# Analytic and numeric values both at or below this magnitude count as agreement
GRADCHECK_ABS_FLOOR = 1e-8

# Default acceptance threshold for gradcheck
GRADCHECK_TOLERANCE = 1e-4

# Smallest rate a decaying step schedule can reach
MIN_LEARNING_RATE = 1e-12

DEFAULT_TIMING = {
    'file_retry_attempts': 3,
    'file_retry_wait': 0.1,
}

# =============================================================================
# MODEL DEFAULTS - Desk-scale stand-ins for the full-size backbone
# =============================================================================

DEFAULT_TAU = 0.07
DEFAULT_TAU_CE = 0.1
DEFAULT_LAMBDA = 1.0

# Extractor bias at init. Large enough that ReLU features of random inputs
# share one direction, so class means start within a few degrees of each other
EXTRACTOR_BIAS_INIT = 3.0

# =============================================================================
# REGISTRIES - Names accepted in configuration files
# =============================================================================

LOSS_VARIANTS: Tuple[str, ...] = ('bsc', 'supcon', 'simclr', 'ce')
CONTRASTIVE_VARIANTS: Tuple[str, ...] = ('bsc', 'supcon', 'simclr')
BASE_INIT_MODES: Tuple[str, ...] = ('mean', 'random')
SCORING_MODES: Tuple[str, ...] = ('cosine', 'dot')
SCHEDULES: Tuple[str, ...] = ('constant', 'step', 'cosine')
DATA_SOURCES: Tuple[str, ...] = ('synthetic', 'csv', 'idx')

# Losses covered by the gradcheck command, in report order
GRADCHECK_LOSSES: Tuple[str, ...] = ('bsc', 'supcon', 'simclr', 'ce', 'cskd', 'finetune')

# IDX dtype codes (third magic byte) to numpy big-endian dtypes
IDX_DTYPES: Dict[int, str] = {
    0x08: '>u1',
    0x09: '>i1',
    0x0B: '>i2',
    0x0C: '>i4',
    0x0D: '>f4',
    0x0E: '>f8',
}

# =============================================================================
# OUTPUT FILES
# =============================================================================

OUTPUT_FILES = {
    'run_record': 'run_record.json',
    'metrics_csv': 'metrics.csv',
    'metrics_summary': 'metrics_summary.json',
    'phase_timings': 'phase_timings.json',
    'sweep_summary': 'sweep_summary.json',
    'checkpoint_dir': 'checkpoints',
    'embeddings': 'embeddings.csv',
    'angle_report': 'angle_report.json',
    'min_angle': 'min_angle.json',
    'psi_trace': 'psi_trace.json',
}

METRICS_CSV_COLUMNS: Tuple[str, ...] = ('t', 'acc_all', 'acc_base', 'acc_new', 'active_classes')

OUTPUT_DIR_ENV_VAR = 'BSC_OUTPUT_DIR'

# =============================================================================
# EXIT CODES
# =============================================================================

EXIT_CODES = {
    'success': 0,
    'runtime_failure': 1,
    'usage_error': 2,
}
