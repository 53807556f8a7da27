"""
FSCIL Batching - Multi-view batches and per-anchor index sets.

Items are laid out in blocks: position (k-1)*n + i holds view k of source i.
For an anchor j the remaining indices split into
- P: other views of the same source (decided by source_id)
- Q: same label, different source
- R: different label
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from fscil_base import BoundsError, ConfigurationError
from fscil_data import AugmentationConfig, LabeledSample, augment

logger = logging.getLogger(__name__)


@dataclass
class MultiViewBatch:
    """m views of n sources in block layout."""
    features: np.ndarray
    labels: np.ndarray
    source_ids: np.ndarray
    view_index: np.ndarray
    m: int
    n: int

    def __len__(self) -> int:
        return self.features.shape[0]

    def item(self, position: int) -> Tuple[np.ndarray, int, int, int]:
        """Return (features, label, source_id, view_index) of one item."""
        _check_index(self, position)
        return (self.features[position], int(self.labels[position]),
                int(self.source_ids[position]), int(self.view_index[position]))


@dataclass(frozen=True)
class AnchorSets:
    """Index sets of one anchor, each sorted ascending."""
    anchor_index: int
    positives_aug: Tuple[int, ...]
    positives_diffsrc: Tuple[int, ...]
    negatives: Tuple[int, ...]

    @property
    def others(self) -> Tuple[int, ...]:
        return tuple(sorted(self.positives_aug + self.positives_diffsrc + self.negatives))


def build_multiview_batch(
    samples: Sequence[LabeledSample],
    m: int,
    aug_config: AugmentationConfig,
    draw_seed: int,
    grid_shape: Optional[Tuple[int, int]] = None,
) -> MultiViewBatch:
    """
    Emit m augmented views of every sample in block layout.

    View k of a sample uses draw index draw_seed*m + (k-1), so distinct draw
    seeds never reuse a view's random stream.

    Args:
        samples: Source samples (n of them)
        m: Views per source, at least 2
        aug_config: Augmentation applied to every view
        draw_seed: Non-negative seed distinguishing batches
        grid_shape: Grid shape for grid-only augmentations

    Returns:
        MultiViewBatch with m*n items
    """
    if m < 2:
        raise ConfigurationError('a multi-view batch needs at least two views', m=m)
    return _build(samples, m, aug_config, draw_seed, grid_shape)


def build_plain_batch(
    samples: Sequence[LabeledSample],
    aug_config: AugmentationConfig,
    draw_seed: int,
    grid_shape: Optional[Tuple[int, int]] = None,
) -> MultiViewBatch:
    """One augmented view per sample, for losses without positive structure."""
    return _build(samples, 1, aug_config, draw_seed, grid_shape)


def _build(samples, m, aug_config, draw_seed, grid_shape) -> MultiViewBatch:
    if not samples:
        raise ConfigurationError('cannot build a batch from zero samples')
    if draw_seed < 0:
        raise ConfigurationError('draw seed must be non-negative', draw_seed=draw_seed)
    n = len(samples)
    rows, labels, sources, views = [], [], [], []
    for k in range(1, m + 1):
        draw_index = draw_seed * m + (k - 1)
        for sample in samples:
            rows.append(augment(sample, aug_config, draw_index, grid_shape))
            labels.append(sample.label)
            sources.append(sample.source_id)
            views.append(k)
    return MultiViewBatch(
        features=np.stack(rows),
        labels=np.asarray(labels, dtype=np.int64),
        source_ids=np.asarray(sources, dtype=np.int64),
        view_index=np.asarray(views, dtype=np.int64),
        m=m,
        n=n,
    )


def _check_index(batch: MultiViewBatch, j: int) -> None:
    if not 0 <= j < len(batch):
        raise BoundsError('anchor index outside the batch', index=j, size=len(batch))


def anchor_sets(batch: MultiViewBatch, j: int) -> AnchorSets:
    """
    Compute P(j), Q(j) and R(j) for anchor j.

    Raises:
        BoundsError: If j is not a batch position
    """
    _check_index(batch, j)
    same_source = batch.source_ids == batch.source_ids[j]
    same_label = batch.labels == batch.labels[j]
    idx = np.arange(len(batch))
    not_self = idx != j
    return AnchorSets(
        anchor_index=j,
        positives_aug=tuple(int(i) for i in idx[same_source & not_self]),
        positives_diffsrc=tuple(int(i) for i in idx[same_label & ~same_source]),
        negatives=tuple(int(i) for i in idx[~same_label]),
    )


def set_masks(batch: MultiViewBatch) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Boolean (P, Q, R) matrices; row j marks the members of each set for anchor j.
    """
    same_source = batch.source_ids[:, None] == batch.source_ids[None, :]
    same_label = batch.labels[:, None] == batch.labels[None, :]
    eye = np.eye(len(batch), dtype=bool)
    return same_source & ~eye, same_label & ~same_source, ~same_label


def iterate_batches(
    samples: Sequence[LabeledSample],
    batch_size: int,
    rng: np.random.Generator,
    min_size: int = 1,
) -> Iterator[List[LabeledSample]]:
    """
    Yield shuffled mini-batches; a trailing batch smaller than min_size is dropped.
    """
    if batch_size <= 0:
        raise ConfigurationError('batch size must be positive', batch_size=batch_size)
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        if len(chunk) >= min_size:
            yield chunk
