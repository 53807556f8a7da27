"""
Tests for the finite-difference check of every training loss.
"""

import pytest

from fscil_config import GradcheckConfig
from fscil_constants import GRADCHECK_LOSSES
from fscil_diagnostics import loss_cases, run_gradcheck_suite


def test_every_loss_passes_gradcheck():
    config = GradcheckConfig()
    results = run_gradcheck_suite(config)
    assert list(results) == list(GRADCHECK_LOSSES)
    for name, result in results.items():
        assert result.max_relative_error <= config.tolerance, name
        assert result.coordinates_checked > 0


def test_contrastive_losses_train_the_head_and_classifier_losses_do_not():
    cases = loss_cases(GradcheckConfig())
    assert any(n.startswith('head.') for n in cases['bsc'][1])
    assert not any(n.startswith('classifier.') for n in cases['bsc'][1])
    assert any(n.startswith('classifier.') for n in cases['finetune'][1])
    assert not any(n.startswith('head.') for n in cases['ce'][1])


def test_scaled_gradients_are_detected():
    config = GradcheckConfig(gradient_scale=2.0, sample_fraction=0.5)
    results = run_gradcheck_suite(config)
    for name, result in results.items():
        assert result.max_relative_error == pytest.approx(0.5, abs=0.02), name
        assert result.worst_parameter is not None


def test_loss_cases_are_deterministic():
    first = {name: fn().item() for name, (fn, _) in loss_cases(GradcheckConfig(seed=3)).items()}
    second = {name: fn().item() for name, (fn, _) in loss_cases(GradcheckConfig(seed=3)).items()}
    assert first == second
