"""
Shared fixtures for the test suite.
"""

import numpy as np
import pytest

from fscil_config import parse_run_config
from fscil_data import LabeledSample


SMALL_RUN = {
    'data': {'num_classes': 8, 'd_in': 8, 'samples_per_class': 20, 'cluster_std': 0.1},
    'session_plan': {'num_base_classes': 4, 'ways': 2, 'shots': 3, 'num_sessions': 3},
    'model': {'hidden_dims': [16], 'feature_dim': 12, 'projection_hidden': 12, 'projection_dim': 8},
    'pretrain': {'epochs': 2, 'batch_size': 16, 'views': 2},
    'finetune': {'epochs': 1, 'batch_size': 16},
    'analysis': {'angle_report': True},
}


def small_run_dict(**overrides):
    """Copy of SMALL_RUN with top-level sections merged from overrides."""
    data = {section: dict(values) for section, values in SMALL_RUN.items()}
    for section, values in overrides.items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values
    return data


@pytest.fixture
def small_config(tmp_path):
    config = parse_run_config(small_run_dict())
    config.output_dir = str(tmp_path / 'output')
    return config


@pytest.fixture
def toy_samples():
    """Two well-separated classes of three samples each in R^4."""
    rng = np.random.default_rng(7)
    centers = {0: np.array([1.0, 0.0, 0.0, 0.0]), 1: np.array([0.0, 1.0, 0.0, 0.0])}
    samples = []
    for label, center in centers.items():
        for _ in range(3):
            samples.append(LabeledSample(center + 0.05 * rng.standard_normal(4), label, len(samples)))
    return samples
