"""
Pretrain Phase - Representation learning on the base session.

Contrastive variants (bsc, supcon, simclr) train the extractor and, when
enabled, the projection head on multi-view batches. The ce variant trains the
extractor with randomly initialized base classifiers on plain batches.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from fscil_base import (
    NumericError,
    PhaseResult,
    PhaseStatus,
    TrainingDivergedError,
    TrainingPhase,
)
from fscil_batching import build_multiview_batch, build_plain_batch, iterate_batches
from fscil_config import PretrainConfig
from fscil_constants import NORM_EPS
from fscil_data import AugmentationConfig, LabeledSample
from fscil_logging import log_phase
from fscil_losses import (
    ContrastiveConfig,
    bsc_loss,
    cross_entropy,
    simclr_loss,
    supcon_loss,
    target_columns,
)
from fscil_model import Network, init_classifiers_random
from fscil_optim import SGD
from fscil_tensor import ParamStore, Tensor, l2_normalize_rows


class PretrainPhase(TrainingPhase):
    """
    Processor for the pre-training phase.

    Workflow:
    1. Select the trainable parameters for the loss variant
    2. Per epoch, shuffle the base split into seeded batches
    3. Build the batch, evaluate the loss, back-propagate, step
    """

    def __init__(
        self,
        config: PretrainConfig,
        samples: Sequence[LabeledSample],
        base_classes: Sequence[int],
        seed: int,
        logger: logging.Logger,
        grid_shape: Optional[Tuple[int, int]] = None,
        checkpoint_callback: Optional[Callable[[Network, int], None]] = None,
    ):
        super().__init__(logger)
        self.config = config
        self.samples = list(samples)
        self.base_classes = list(base_classes)
        self.seed = seed
        self.grid_shape = grid_shape
        self.checkpoint_callback = checkpoint_callback
        self.augmentation = AugmentationConfig.from_specs(config.augmentation, rng_seed=seed)
        self.store: Optional[ParamStore] = None
        self.optimizer: Optional[SGD] = None

    @property
    def phase_name(self) -> str:
        return 'pretrain'

    @log_phase('select parameters')
    def prepare(self, network: Network, result: PhaseResult) -> None:
        if self.config.epochs == 0:
            self.logger.info('Zero pre-training epochs; network left unchanged')
            result.status = PhaseStatus.SKIPPED
            return

        if self.config.is_contrastive:
            prefixes = ['extractor.', 'head.'] if self.config.use_head else ['extractor.']
            self.store = network.params.select(prefixes)
        else:
            network.classifiers.clear()
            init_classifiers_random(network, self.base_classes, self.seed, session=1)
            self.store = network.extractor_params().merged(network.classifiers.params_store(self.base_classes))

        batches_per_epoch = -(-len(self.samples) // self.config.batch_size)
        optimizer_config = self.config.optimizer.with_total_steps(self.config.epochs * batches_per_epoch)
        self.optimizer = SGD(self.store, optimizer_config)
        self.logger.info(
            f'Loss: {self.config.loss}, views: {self.config.views}, head: {self.config.use_head}, '
            f'{self.store.num_parameters()} trainable values'
        )

    def _batch_loss(self, network: Network, chunk: List[LabeledSample], draw_seed: int) -> Tensor:
        if not self.config.is_contrastive:
            batch = build_plain_batch(chunk, self.augmentation, draw_seed, self.grid_shape)
            features = network.forward_features(Tensor(batch.features))
            logits = network.class_logits(features, self.base_classes)
            return cross_entropy(logits, target_columns(batch.labels, self.base_classes))

        batch = build_multiview_batch(chunk, self.config.views, self.augmentation, draw_seed, self.grid_shape)
        features = network.forward_features(Tensor(batch.features))
        if self.config.use_head:
            projections = network.forward_projection(features)
        else:
            projections = l2_normalize_rows(features, floor=NORM_EPS)

        if self.config.loss == 'bsc':
            contrastive = ContrastiveConfig(tau=self.config.tau, alpha=self.config.alpha, m=self.config.views)
            return bsc_loss(batch, projections, contrastive)
        if self.config.loss == 'supcon':
            return supcon_loss(batch, projections, self.config.tau)
        return simclr_loss(batch, projections, self.config.tau)

    def run(self, network: Network, result: PhaseResult) -> PhaseResult:
        if self.checkpoint_callback:
            self.checkpoint_callback(network, 0)

        global_step = 0
        for epoch in range(self.config.epochs):
            epoch_logger = self.logger.with_epoch(epoch + 1) if hasattr(self.logger, 'with_epoch') else self.logger
            rng = np.random.default_rng([self.seed, 1, epoch])
            batch_losses = []
            for batch_index, chunk in enumerate(iterate_batches(self.samples, self.config.batch_size, rng)):
                try:
                    loss = self._batch_loss(network, chunk, global_step)
                except NumericError as e:
                    raise TrainingDivergedError(f'pre-training loss is not finite: {e}', epoch + 1, batch_index)
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                batch_losses.append(loss.item())
                global_step += 1

            epoch_loss = float(np.mean(batch_losses))
            result.loss_history.append(epoch_loss)
            epoch_logger.info(f'loss {epoch_loss:.6f}, lr {self.optimizer.current_lr:.5f}')
            self.notify_epoch(epoch, epoch_loss)
            if self.checkpoint_callback:
                self.checkpoint_callback(network, epoch + 1)

        return result
