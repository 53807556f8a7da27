"""
FSCIL Diagnostics - Finite-difference verification of every training loss.

Each loss is composed through a small seeded network on a seeded multi-view
batch and compared against central differences with gradcheck_detailed.
"""

import logging
from typing import Callable, Dict, Tuple

import numpy as np

from fscil_batching import build_multiview_batch
from fscil_config import GradcheckConfig
from fscil_constants import GRADCHECK_LOSSES
from fscil_data import AugmentationConfig, GaussianNoise, LabeledSample
from fscil_losses import (
    ContrastiveConfig,
    bsc_loss,
    cross_entropy,
    cskd_loss,
    finetune_loss,
    simclr_loss,
    supcon_loss,
    target_columns,
)
from fscil_model import Network, NetworkConfig, init_classifiers_from_means
from fscil_tensor import GradcheckResult, ParamStore, Tensor, gradcheck_detailed

logger = logging.getLogger(__name__)


def _setup(config: GradcheckConfig) -> Tuple[Network, object, list]:
    rng = np.random.default_rng([config.seed, 0])
    samples = [
        LabeledSample(rng.standard_normal(config.d_in), i % config.num_classes, i)
        for i in range(config.n_sources)
    ]
    network = Network(NetworkConfig(
        d_in=config.d_in,
        hidden_dims=config.hidden_dims,
        feature_dim=config.feature_dim,
        projection_hidden=config.projection_hidden,
        projection_dim=config.projection_dim,
        tau_ce=config.tau_ce,
        seed=config.seed,
    ))
    classes = sorted({s.label for s in samples})
    init_classifiers_from_means(network, samples, classes, session=1)
    augmentation = AugmentationConfig([GaussianNoise(0.1)], rng_seed=config.seed)
    batch = build_multiview_batch(samples, config.views, augmentation, draw_seed=0)
    return network, batch, classes


def loss_cases(config: GradcheckConfig) -> Dict[str, Tuple[Callable[[], Tensor], ParamStore]]:
    """Map each loss name to (deterministic loss function, parameters it trains)."""
    network, batch, classes = _setup(config)
    inputs = Tensor(batch.features)
    contrastive = ContrastiveConfig(tau=config.tau, alpha=config.alpha, m=config.views)
    contrastive_store = network.params.select(['extractor.', 'head.'])
    classifier_store = network.extractor_params().merged(network.classifiers.params_store(classes))
    targets = target_columns(batch.labels, classes)
    teacher = network.frozen_copy()
    # View k+1 of the same source sits n positions later
    partners = (np.arange(len(batch)) + batch.n) % len(batch)

    def projections():
        return network.forward_projection(network.forward_features(inputs))

    def student_logits():
        return network.class_logits(network.forward_features(inputs), classes)

    def teacher_logits():
        return teacher.class_logits(teacher.forward_features(Tensor(batch.features[partners])), classes).value

    return {
        'bsc': (lambda: bsc_loss(batch, projections(), contrastive), contrastive_store),
        'supcon': (lambda: supcon_loss(batch, projections(), config.tau), contrastive_store),
        'simclr': (lambda: simclr_loss(batch, projections(), config.tau), contrastive_store),
        'ce': (lambda: cross_entropy(student_logits(), targets), classifier_store),
        'cskd': (lambda: cskd_loss(student_logits(), teacher_logits()), classifier_store),
        'finetune': (lambda: finetune_loss(batch, network, config.lam, teacher, classes,
                                           partner_seed=config.seed), classifier_store),
    }


def run_gradcheck_suite(config: GradcheckConfig) -> Dict[str, GradcheckResult]:
    """
    Gradient-check every loss.

    Args:
        config: Sizes, tolerances and the gradient_scale corruption hook

    Returns:
        Result per loss name, in report order
    """
    cases = loss_cases(config)
    results: Dict[str, GradcheckResult] = {}
    for name in GRADCHECK_LOSSES:
        lossfn, store = cases[name]
        results[name] = gradcheck_detailed(
            lossfn, store,
            eps=config.eps,
            sample_fraction=config.sample_fraction,
            seed=config.seed,
            gradient_scale=config.gradient_scale,
        )
        logger.info(f'gradcheck {name}: max relative error {results[name].max_relative_error:.3e}')
    return results
