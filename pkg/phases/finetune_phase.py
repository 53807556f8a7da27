"""
Finetune Phase - Base classifier initialization and cs-kd regularized tuning.

The bank is reset to the base classes (mean-feature or random init). When
enabled, the extractor and base classifiers are then optimized with
cross-entropy plus lambda times cs-kd on multi-view batches. The projection
head is never touched.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from fscil_base import (
    ClassifierOrigin,
    ConfigurationError,
    NumericError,
    PhaseResult,
    PhaseStatus,
    TrainingDivergedError,
    TrainingPhase,
)
from fscil_batching import MultiViewBatch, build_multiview_batch, build_plain_batch, iterate_batches
from fscil_config import FinetuneConfig
from fscil_data import AugmentationConfig, LabeledSample
from fscil_logging import log_phase
from fscil_losses import finetune_loss
from fscil_model import Network, init_classifiers_from_means, init_classifiers_random
from fscil_optim import SGD

# Offsets fine-tuning draw indices away from pre-training ones
DRAW_OFFSET = 1_000_000


class FinetunePhase(TrainingPhase):
    """
    Processor for the fine-tuning phase.

    Workflow:
    1. Reset the bank and install the base classifiers
    2. Per epoch, snapshot the cs-kd teacher
    3. Optimize the composite loss over multi-view batches
    """

    def __init__(
        self,
        config: FinetuneConfig,
        samples: Sequence[LabeledSample],
        base_classes: Sequence[int],
        views: int,
        augmentation: Sequence[dict],
        seed: int,
        logger: logging.Logger,
        grid_shape: Optional[Tuple[int, int]] = None,
    ):
        super().__init__(logger)
        self.config = config
        self.samples = list(samples)
        self.base_classes = list(base_classes)
        self.views = views
        self.seed = seed
        self.grid_shape = grid_shape
        self.augmentation = AugmentationConfig.from_specs(augmentation, rng_seed=seed)
        self.optimizer: Optional[SGD] = None

    @property
    def phase_name(self) -> str:
        return 'finetune'

    @property
    def uses_cskd(self) -> bool:
        return self.config.cskd and self.config.lam > 0

    @log_phase('base classifier init')
    def prepare(self, network: Network, result: PhaseResult) -> None:
        network.classifiers.clear()
        if self.config.base_init == 'mean':
            init_classifiers_from_means(network, self.samples, self.base_classes, session=1)
        else:
            init_classifiers_random(network, self.base_classes, self.seed, session=1)
        result.completed_steps.append(f'{self.config.base_init}-init')
        self.logger.info(f'Installed {len(self.base_classes)} base classifiers ({self.config.base_init} init)')

        if not self.config.enabled or self.config.epochs == 0:
            self.logger.info('Fine-tuning disabled; keeping initialized classifiers')
            result.status = PhaseStatus.SKIPPED
            return
        if self.views < 1 or (self.uses_cskd and self.views < 2):
            raise ConfigurationError('cs-kd needs at least two views per source', views=self.views)

        store = network.extractor_params().merged(network.classifiers.params_store(self.base_classes))
        batches_per_epoch = -(-len(self.samples) // self.config.batch_size)
        optimizer_config = self.config.optimizer.with_total_steps(self.config.epochs * batches_per_epoch)
        self.optimizer = SGD(store, optimizer_config)

    def _build_batch(self, chunk: Sequence[LabeledSample], draw_seed: int) -> MultiViewBatch:
        if self.views >= 2:
            return build_multiview_batch(chunk, self.views, self.augmentation, draw_seed, self.grid_shape)
        return build_plain_batch(chunk, self.augmentation, draw_seed, self.grid_shape)

    def run(self, network: Network, result: PhaseResult) -> PhaseResult:
        global_step = 0
        for epoch in range(self.config.epochs):
            epoch_logger = self.logger.with_epoch(epoch + 1) if hasattr(self.logger, 'with_epoch') else self.logger
            teacher = network.frozen_copy() if self.uses_cskd else None
            rng = np.random.default_rng([self.seed, 2, epoch])
            batch_losses = []
            for batch_index, chunk in enumerate(iterate_batches(self.samples, self.config.batch_size, rng)):
                batch = self._build_batch(chunk, DRAW_OFFSET + global_step)
                try:
                    loss = finetune_loss(batch, network, self.config.lam, teacher, self.base_classes,
                                         partner_seed=[self.seed, 3, global_step])
                except NumericError as e:
                    raise TrainingDivergedError(f'fine-tuning loss is not finite: {e}', epoch + 1, batch_index)
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                batch_losses.append(loss.item())
                global_step += 1

            epoch_loss = float(np.mean(batch_losses))
            result.loss_history.append(epoch_loss)
            epoch_logger.info(f'loss {epoch_loss:.6f}, lr {self.optimizer.current_lr:.5f}')
            self.notify_epoch(epoch, epoch_loss)

        for c in self.base_classes:
            if network.classifiers.origin(c) == ClassifierOrigin.MEAN_INIT:
                network.classifiers.set_origin(c, ClassifierOrigin.OPTIMIZED_FROM_MEAN)
        return result
