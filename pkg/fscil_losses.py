"""
FSCIL Losses - Contrastive, cross-entropy and self-distillation objectives.

The contrastive losses share one form. With S the anchor-by-item similarity
matrix divided by tau and l(p; j) the log-softmax of row j over A(j), each
anchor contributes

    -(alpha * sum_P l + sum_Q l) / (alpha * |P| + |Q|)

and the batch loss is the mean over anchors. SupCon is alpha = 1; SimCLR
keeps only the P terms.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from fscil_base import (
    BoundsError,
    ConfigurationError,
    DegenerateBatchError,
    DimensionError,
    LabelError,
)
from fscil_batching import MultiViewBatch, set_masks
from fscil_constants import DEFAULT_TAU
from fscil_tensor import (
    Tensor,
    add,
    add_scalar,
    as_tensor,
    log_softmax_rows,
    masked_log_softmax,
    matmul,
    scale,
    transpose,
    weighted_sum,
)

logger = logging.getLogger(__name__)

TensorLike = Union[Tensor, np.ndarray]


@dataclass
class ContrastiveConfig:
    tau: float = DEFAULT_TAU
    alpha: float = 1.0
    m: int = 2

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError('tau must be positive', tau=self.tau)
        if not self.alpha > 0:
            raise ConfigurationError('alpha must be positive', alpha=self.alpha)
        if self.m < 2:
            raise ConfigurationError('contrastive losses need at least two views', m=self.m)


@dataclass
class LogitDistribution:
    """Logits of one sample over an ordered class list."""
    logits: np.ndarray
    class_ids: Sequence[int]

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.class_ids = tuple(int(c) for c in self.class_ids)
        if self.logits.shape != (len(self.class_ids),):
            raise DimensionError('one logit per class expected',
                                 logits=self.logits.shape, classes=len(self.class_ids))
        if not self.class_ids:
            raise ConfigurationError('a logit distribution needs at least one class')

    def log_probabilities(self) -> np.ndarray:
        return log_softmax_rows(self.logits[None, :])[0]

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities())

    def predicted_class(self) -> int:
        """Argmax class; ties go to the lowest class id."""
        best = self.logits.max()
        return min(c for c, v in zip(self.class_ids, self.logits) if v == best)


# =============================================================================
# CONTRASTIVE
# =============================================================================

def _values(x: TensorLike) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def softmax_term(projections: TensorLike, j: int, p: int, tau: float) -> float:
    """
    log of exp(sim(h_p, h_j)/tau) over the sum across all a != j.

    Args:
        projections: Unit-norm rows h_a
        j: Anchor index
        p: Target index, must differ from j
        tau: Temperature

    Returns:
        Value <= 0
    """
    h = _values(projections)
    count = h.shape[0]
    if not 0 <= j < count or not 0 <= p < count:
        raise BoundsError('index outside the batch', anchor=j, target=p, size=count)
    if count < 2:
        raise DegenerateBatchError('anchor has no competitors', anchor=j)
    if p == j:
        raise BoundsError('target must differ from the anchor', anchor=j)
    sims = h @ h[j] / tau
    others = np.delete(sims, j)
    peak = others.max()
    return float(sims[p] - peak - np.log(np.sum(np.exp(others - peak))))


def _similarity_log_probs(projections: TensorLike, tau: float) -> Tensor:
    h = as_tensor(projections)
    if h.value.ndim != 2:
        raise DimensionError('projections must be a matrix', shape=h.shape)
    if h.shape[0] < 2:
        raise DegenerateBatchError('a contrastive batch needs at least two items', size=h.shape[0])
    sims = scale(matmul(h, transpose(h)), 1.0 / tau)
    competitors = ~np.eye(h.shape[0], dtype=bool)
    return masked_log_softmax(sims, competitors)


def _weighted_contrastive(projections: TensorLike, tau: float, pos_weights: np.ndarray) -> Tensor:
    log_probs = _similarity_log_probs(projections, tau)
    totals = pos_weights.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise DegenerateBatchError('an anchor has no positives')
    weights = -pos_weights / totals / pos_weights.shape[0]
    return weighted_sum(log_probs, weights)


def _check_batch(batch: MultiViewBatch, projections: TensorLike) -> None:
    rows = _values(projections).shape[0]
    if rows != len(batch):
        raise DimensionError('one projection per batch item expected', items=len(batch), rows=rows)


def bsc_loss(batch: MultiViewBatch, projections: TensorLike, config: ContrastiveConfig) -> Tensor:
    """
    Balanced supervised contrastive loss.

    Args:
        batch: Multi-view batch
        projections: Unit-norm projection rows, one per item
        config: tau and alpha

    Returns:
        Scalar Tensor
    """
    _check_batch(batch, projections)
    p_mask, q_mask, _ = set_masks(batch)
    weights = config.alpha * p_mask + q_mask.astype(np.float64)
    return _weighted_contrastive(projections, config.tau, weights)


def supcon_loss(batch: MultiViewBatch, projections: TensorLike, tau: float) -> Tensor:
    """Supervised contrastive loss: bsc_loss with alpha fixed to 1."""
    return bsc_loss(batch, projections, ContrastiveConfig(tau=tau, alpha=1.0, m=max(batch.m, 2)))


def simclr_loss(batch: MultiViewBatch, projections: TensorLike, tau: float) -> Tensor:
    """Label-free contrastive loss; same-class items from other sources act as negatives."""
    if not tau > 0:
        raise ConfigurationError('tau must be positive', tau=tau)
    _check_batch(batch, projections)
    p_mask, _, _ = set_masks(batch)
    return _weighted_contrastive(projections, tau, p_mask.astype(np.float64))


# =============================================================================
# CLASSIFICATION
# =============================================================================

def cross_entropy_loss(logits: LogitDistribution, true_class: int) -> float:
    """-log softmax(logits)[true_class]."""
    if true_class not in logits.class_ids:
        raise LabelError('class not among the scored classes', true_class=true_class)
    return float(-logits.log_probabilities()[logits.class_ids.index(true_class)])


def target_columns(labels: Sequence[int], class_ids: Sequence[int]) -> np.ndarray:
    """Map labels to logit columns."""
    column = {int(c): i for i, c in enumerate(class_ids)}
    try:
        return np.array([column[int(label)] for label in labels], dtype=np.int64)
    except KeyError as e:
        raise LabelError('label not among the scored classes', label=e.args[0])


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """
    Mean cross-entropy of a B×C logit matrix against target column indices.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.value.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError('one target per logit row expected', logits=logits.shape, targets=targets.shape)
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise LabelError('target column out of range')
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = -1.0 / len(targets)
    return weighted_sum(masked_log_softmax(logits), onehot)


def cskd_loss(student_logits: Tensor, teacher_logits: TensorLike) -> Tensor:
    """
    KL(softmax(teacher) || softmax(student)) averaged over rows.

    Teacher logits are treated as constants; no gradient reaches them.
    """
    student = as_tensor(student_logits)
    teacher = _values(teacher_logits)
    # Constant single rows are promoted; trainable logits must already be B×C
    if student.value.ndim == 1 and not student.requires_grad:
        student = Tensor(student.value[None, :])
    if teacher.ndim == 1:
        teacher = teacher[None, :]
    if student.shape != teacher.shape:
        raise DimensionError('student and teacher logits differ in shape',
                             student=student.shape, teacher=teacher.shape)
    rows = teacher.shape[0]
    log_teacher = log_softmax_rows(teacher)
    probs = np.exp(log_teacher)
    entropy_term = float(np.sum(probs * log_teacher)) / rows
    cross = weighted_sum(masked_log_softmax(student), -probs / rows)
    return add_scalar(cross, entropy_term)


def _draw_partners(batch: MultiViewBatch, partner_seed: Union[int, Sequence[int]]) -> np.ndarray:
    p_mask, _, _ = set_masks(batch)
    rng = np.random.default_rng(partner_seed)
    return np.array([rng.choice(np.flatnonzero(row)) for row in p_mask], dtype=np.int64)


def finetune_loss(
    batch: MultiViewBatch,
    network,
    lam: float,
    teacher=None,
    classes: Optional[Sequence[int]] = None,
    partner_seed: Union[int, Sequence[int]] = 0,
) -> Tensor:
    """
    Cross-entropy plus lam times cs-kd, computed on extractor features.

    Each anchor's teacher input is a view drawn uniformly from P(anchor).

    Args:
        batch: Multi-view batch of base-session samples
        network: Network with base classifiers installed
        lam: Weight of the distillation term
        teacher: Frozen copy providing the teacher logits (None disables cs-kd)
        classes: Scored classes, defaults to every classifier in the bank
        partner_seed: Seed of the partner draw

    Returns:
        Scalar Tensor
    """
    if lam < 0:
        raise ConfigurationError('lambda must be non-negative', lam=lam)
    classes = list(classes) if classes is not None else network.classifiers.class_ids
    features = network.forward_features(Tensor(batch.features))
    logits = network.class_logits(features, classes)
    loss = cross_entropy(logits, target_columns(batch.labels, classes))
    if teacher is None or lam == 0:
        return loss

    if batch.m < 2:
        raise ConfigurationError('cs-kd needs a multi-view batch', m=batch.m)
    partners = _draw_partners(batch, partner_seed)
    teacher_features = teacher.forward_features(Tensor(batch.features[partners]))
    teacher_logits = teacher.class_logits(teacher_features, classes).value
    return add(loss, scale(cskd_loss(logits, teacher_logits), lam))
