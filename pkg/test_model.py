"""
Tests for the network, the classifier bank and checkpoints.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fscil_base import (
    CapacityError,
    CheckpointError,
    ClassifierOrigin,
    ConfigurationError,
    ConflictError,
    DimensionError,
    LabelError,
)
from fscil_batching import build_multiview_batch
from fscil_constants import EXTRACTOR_BIAS_INIT
from fscil_data import AugmentationConfig, LabeledSample
from fscil_losses import finetune_loss
from fscil_model import (
    Network,
    NetworkConfig,
    init_classifiers_from_means,
    init_classifiers_random,
    load_checkpoint,
    logits,
    save_checkpoint,
)
from fscil_tensor import Tensor

CONFIG = NetworkConfig(d_in=4, hidden_dims=(6,), feature_dim=5, projection_hidden=5, projection_dim=3, seed=1)


def test_parameters_are_named_and_seeded():
    a, b = Network(CONFIG), Network(CONFIG)
    assert a.params.names() == [
        'extractor.0.weight', 'extractor.0.bias', 'extractor.1.weight', 'extractor.1.bias',
        'head.0.weight', 'head.0.bias', 'head.1.weight', 'head.1.bias',
    ]
    assert a.params.fingerprint() == b.params.fingerprint()
    assert_allclose(a.params['extractor.0.bias'].value, EXTRACTOR_BIAS_INIT)


def test_features_are_non_negative_and_projections_unit(toy_samples):
    network = Network(CONFIG)
    features = network.forward_features(Tensor(np.stack([s.features for s in toy_samples])))
    assert features.shape == (6, 5)
    assert np.all(features.value >= 0)
    assert_allclose(network.embed(toy_samples), features.value)
    projections = network.forward_projection(features)
    assert_allclose(np.linalg.norm(projections.value, axis=1), 1.0)


def test_wrong_input_dimension():
    with pytest.raises(DimensionError):
        Network(CONFIG).forward_features(np.zeros((2, 3)))


def test_mean_init_uses_normalized_features(toy_samples):
    network = Network(CONFIG)
    init_classifiers_from_means(network, toy_samples, [0, 1], session=1)
    members = [s for s in toy_samples if s.label == 0]
    features = network.embed(members)
    expected = (features / np.linalg.norm(features, axis=1, keepdims=True)).mean(axis=0)
    assert_allclose(network.classifiers.vector(0), expected)
    assert network.classifiers.origin(0) == ClassifierOrigin.MEAN_INIT
    assert network.classifiers.session(1) == 1


def test_mean_init_errors(toy_samples):
    network = Network(CONFIG)
    with pytest.raises(CapacityError):
        init_classifiers_from_means(network, toy_samples, [0, 7], session=1)
    assert len(network.classifiers) == 0
    init_classifiers_from_means(network, toy_samples, [0], session=1)
    with pytest.raises(ConflictError):
        init_classifiers_from_means(network, toy_samples, [0], session=2)


def test_random_init_is_seeded():
    a, b = Network(CONFIG), Network(CONFIG)
    init_classifiers_random(a, [3, 1], seed=5)
    init_classifiers_random(b, [3, 1], seed=5)
    assert a.classifiers.fingerprint() == b.classifiers.fingerprint()
    assert a.classifiers.origin(3) == ClassifierOrigin.RANDOM_INIT


def test_predict_ties_go_to_lowest_class(toy_samples):
    network = Network(CONFIG)
    vector = np.ones(CONFIG.feature_dim)
    network.classifiers.add(5, vector, ClassifierOrigin.MEAN_INIT, 1)
    network.classifiers.add(2, vector, ClassifierOrigin.MEAN_INIT, 1)
    assert list(network.predict(toy_samples, [5, 2])) == [2] * len(toy_samples)


def test_logits_follow_active_class_order(toy_samples):
    network = Network(CONFIG)
    init_classifiers_from_means(network, toy_samples, [1, 0], session=1)
    features = network.embed(toy_samples[:1])
    (dist,) = logits(network, features, [0, 1])
    assert dist.class_ids == (0, 1)
    assert dist.predicted_class() == 0
    with pytest.raises(LabelError):
        network.scores(features, [9])


def test_frozen_copy_is_independent(toy_samples):
    network = Network(CONFIG)
    init_classifiers_from_means(network, toy_samples, [0, 1], session=1)
    copy = network.frozen_copy()
    assert not any(copy.params[n].requires_grad for n in copy.params)
    network.params['extractor.0.weight'].value += 1.0
    assert copy.params.fingerprint() != network.params.fingerprint()


def test_checkpoint_round_trip(tmp_path, toy_samples):
    network = Network(CONFIG)
    init_classifiers_from_means(network, toy_samples, [1, 0], session=1)
    network.classifiers.set_origin(1, ClassifierOrigin.OPTIMIZED_FROM_MEAN)
    path = save_checkpoint(network, tmp_path / 'ckpt' / 'model.npz', extra={'epoch': 3})

    restored, extra = load_checkpoint(path)
    assert extra == {'epoch': 3}
    assert restored.params.fingerprint() == network.params.fingerprint()
    assert restored.classifiers.class_ids == [1, 0]
    assert restored.classifiers.fingerprint() == network.classifiers.fingerprint()
    assert restored.classifiers.origin(1) == ClassifierOrigin.OPTIMIZED_FROM_MEAN
    assert np.array_equal(restored.predict(toy_samples, [0, 1]), network.predict(toy_samples, [0, 1]))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / 'missing.npz')
    broken = tmp_path / 'broken.npz'
    broken.write_bytes(b'not a checkpoint')
    with pytest.raises(CheckpointError):
        load_checkpoint(broken)


def test_bank_rejects_wrong_dimension():
    network = Network(CONFIG)
    with pytest.raises(DimensionError):
        network.classifiers.add(0, np.ones(3), ClassifierOrigin.MEAN_INIT, 1)


def test_finetune_loss_adds_weighted_distillation(toy_samples):
    network = Network(CONFIG)
    init_classifiers_from_means(network, toy_samples, [0, 1], session=1)
    batch = build_multiview_batch(toy_samples, 2, AugmentationConfig.from_specs([{'op': 'gaussian_noise', 'sigma': 0.05}]), draw_seed=3)
    teacher = network.frozen_copy()

    ce_only = finetune_loss(batch, network, lam=1.0).item()
    assert finetune_loss(batch, network, lam=0.0, teacher=teacher).item() == pytest.approx(ce_only, abs=1e-12)
    with_kd = finetune_loss(batch, network, lam=1.0, teacher=teacher, partner_seed=5).item()
    heavier = finetune_loss(batch, network, lam=2.0, teacher=teacher, partner_seed=5).item()
    assert with_kd >= ce_only - 1e-12
    assert heavier - ce_only == pytest.approx(2.0 * (with_kd - ce_only), abs=1e-12)

    with pytest.raises(ConfigurationError):
        finetune_loss(batch, network, lam=-1.0, teacher=teacher)


def test_zero_parameters_give_zero_features():
    network = Network(CONFIG)
    for name in network.extractor_params().names():
        network.params[name].value[...] = 0.0
    x = np.random.default_rng(0).standard_normal((3, CONFIG.d_in))
    assert np.array_equal(network.forward_features(x).value, np.zeros((3, CONFIG.feature_dim)))
