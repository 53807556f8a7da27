"""
Tests for the contrastive, cross-entropy and self-distillation losses.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fscil_base import (
    BoundsError,
    ConfigurationError,
    DegenerateBatchError,
    DimensionError,
    LabelError,
)
from fscil_batching import MultiViewBatch, build_multiview_batch
from fscil_data import AugmentationConfig, LabeledSample
from fscil_losses import (
    ContrastiveConfig,
    LogitDistribution,
    bsc_loss,
    cross_entropy,
    cross_entropy_loss,
    cskd_loss,
    simclr_loss,
    softmax_term,
    supcon_loss,
)
from fscil_tensor import Tensor, l2_normalize_rows


def _batch(labels, m):
    samples = [LabeledSample(np.zeros(2), label, i) for i, label in enumerate(labels)]
    return build_multiview_batch(samples, m, AugmentationConfig(), draw_seed=0)


def _unit_rows(rng, rows, dim):
    h = rng.standard_normal((rows, dim))
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def test_softmax_term_hand_oracle():
    h = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert softmax_term(h, 0, 1, tau=1.0) == pytest.approx(1.0 - math.log(math.e + 2.0), abs=1e-12)
    with pytest.raises(BoundsError):
        softmax_term(h, 0, 0, tau=1.0)
    with pytest.raises(BoundsError):
        softmax_term(h, 0, 9, tau=1.0)


def test_bsc_orthogonal_batch_hand_oracle():
    batch = MultiViewBatch(
        features=np.zeros((4, 2)),
        labels=np.array([0, 1, 0, 1]),
        source_ids=np.array([0, 1, 0, 1]),
        view_index=np.array([1, 1, 2, 2]),
        m=2,
        n=2,
    )
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    loss = bsc_loss(batch, Tensor(h), ContrastiveConfig(tau=1.0, alpha=1.0, m=2))
    assert loss.item() == pytest.approx(math.log(2.0 + math.e) - 1.0, abs=1e-10)


@pytest.mark.parametrize('alpha', [0.5, 1.0, 3.0])
def test_collapsed_projections_give_log_of_competitors(alpha):
    batch = _batch([0, 0, 1, 2], m=3)
    h = np.tile([[0.6, 0.8]], (len(batch), 1))
    expected = math.log(len(batch) - 1)
    assert bsc_loss(batch, h, ContrastiveConfig(tau=0.5, alpha=alpha, m=3)).item() == pytest.approx(expected)
    assert simclr_loss(batch, h, 0.5).item() == pytest.approx(expected)


@settings(max_examples=100, deadline=None)
@given(
    labels=st.lists(st.integers(min_value=0, max_value=2), min_size=2, max_size=6),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_bsc_with_unit_alpha_equals_supcon(labels, seed):
    batch = _batch(labels, m=2)
    h = _unit_rows(np.random.default_rng(seed), len(batch), 4)
    bsc = bsc_loss(batch, h, ContrastiveConfig(tau=0.2, alpha=1.0, m=2)).item()
    supcon = supcon_loss(batch, h, 0.2).item()
    assert abs(bsc - supcon) <= 1e-12


def test_alpha_shifts_weight_between_positive_kinds():
    batch = _batch([0, 0, 1, 1], m=2)
    h = _unit_rows(np.random.default_rng(3), len(batch), 4)
    low = bsc_loss(batch, h, ContrastiveConfig(tau=0.5, alpha=1e-6, m=2)).item()
    high = bsc_loss(batch, h, ContrastiveConfig(tau=0.5, alpha=1e6, m=2)).item()
    assert high == pytest.approx(simclr_loss(batch, h, 0.5).item(), rel=1e-5)
    assert low != pytest.approx(high)


def test_contrastive_shape_and_config_checks():
    batch = _batch([0, 1], m=2)
    with pytest.raises(DimensionError):
        bsc_loss(batch, np.eye(3), ContrastiveConfig())
    with pytest.raises(ConfigurationError):
        ContrastiveConfig(tau=0.0)
    with pytest.raises(ConfigurationError):
        ContrastiveConfig(m=1)


def test_degenerate_single_item_batch():
    batch = MultiViewBatch(np.zeros((1, 2)), np.array([0]), np.array([0]), np.array([1]), m=1, n=1)
    with pytest.raises(DegenerateBatchError):
        simclr_loss(batch, np.array([[1.0, 0.0]]), 0.5)


def test_cross_entropy_hand_oracle():
    dist = LogitDistribution([1.0, 0.0], [0, 1])
    assert cross_entropy_loss(dist, 0) == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)
    assert cross_entropy(Tensor(np.array([[1.0, 0.0]])), [0]).item() == pytest.approx(0.3133, abs=1e-4)
    with pytest.raises(LabelError):
        cross_entropy_loss(dist, 5)


def test_predicted_class_breaks_ties_low():
    assert LogitDistribution([2.0, 2.0, 1.0], [9, 4, 1]).predicted_class() == 4


def test_cskd_hand_oracle():
    student = Tensor(np.array([[math.log(3.0), 0.0]]))
    teacher = np.array([[0.0, 0.0]])
    expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
    assert cskd_loss(student, teacher).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1438, abs=1e-4)


def test_cskd_is_zero_for_identical_logits_and_shape_checked():
    logits = np.array([[0.3, -1.2, 2.0]])
    assert cskd_loss(Tensor(logits), logits).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DimensionError):
        cskd_loss(Tensor(np.zeros((2, 3)), requires_grad=True), np.zeros((2, 2)))


def test_cskd_gradient_does_not_reach_teacher():
    student = Tensor(np.array([[0.1, 0.9]]), requires_grad=True)
    teacher = Tensor(np.array([[1.0, -1.0]]), requires_grad=True)
    cskd_loss(student, teacher).backward()
    assert student.grad is not None
    assert teacher.grad is None


def _permuted(batch, order):
    return MultiViewBatch(batch.features[order], batch.labels[order], batch.source_ids[order],
                          batch.view_index[order], m=batch.m, n=batch.n)


@settings(max_examples=50, deadline=None)
@given(
    labels=st.lists(st.integers(min_value=0, max_value=2), min_size=2, max_size=5),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_contrastive_losses_ignore_item_order(labels, seed):
    rng = np.random.default_rng(seed)
    batch = _batch(labels, m=3)
    h = _unit_rows(rng, len(batch), 4)
    order = rng.permutation(len(batch))
    shuffled = _permuted(batch, order)
    config = ContrastiveConfig(tau=0.3, alpha=0.4, m=3)
    assert bsc_loss(shuffled, h[order], config).item() == pytest.approx(bsc_loss(batch, h, config).item(), abs=1e-12)
    assert simclr_loss(shuffled, h[order], 0.3).item() == pytest.approx(simclr_loss(batch, h, 0.3).item(), abs=1e-12)


def test_bsc_ignores_projection_scale_before_normalization():
    rng = np.random.default_rng(4)
    batch = _batch([0, 1, 0, 2], m=2)
    raw = rng.standard_normal((len(batch), 5))
    scales = rng.uniform(0.01, 100.0, size=(len(batch), 1))
    config = ContrastiveConfig(tau=0.2, alpha=0.5, m=2)
    plain = bsc_loss(batch, l2_normalize_rows(Tensor(raw)), config).item()
    rescaled = bsc_loss(batch, l2_normalize_rows(Tensor(raw * scales)), config).item()
    assert rescaled == pytest.approx(plain, abs=1e-12)


@pytest.mark.parametrize('alpha', [1e-3, 0.2, 1.0, 7.0])
def test_alpha_is_irrelevant_when_same_class_views_coincide(alpha):
    # Every P-term then equals every Q-term of the same anchor
    batch = _batch([0, 0, 1, 1], m=2)
    u, v = np.array([1.0, 0.0, 0.0]), np.array([0.6, 0.8, 0.0])
    h = np.array([u if label == 0 else v for label in batch.labels])
    expected = supcon_loss(batch, h, 0.5).item()
    assert bsc_loss(batch, h, ContrastiveConfig(tau=0.5, alpha=alpha, m=2)).item() == pytest.approx(expected, abs=1e-12)
