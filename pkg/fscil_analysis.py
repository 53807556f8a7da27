"""
FSCIL Analysis - Angular diagnostics of the learned feature space.

- class_mean_features / psi: mean pairwise angle between class mean features
- min_angle_study: mean nearest-neighbour angle of random unit vectors
- psi_trace: psi evaluated at every saved checkpoint
- export_embeddings: features for external visualization
- base_to_new_ratio: base test samples claimed by incremental classifiers
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from fscil_base import CapacityError, ConfigurationError, DegenerateVectorError, SchemaError, UndefinedMetricError
from fscil_constants import NORM_EPS
from fscil_data import LabeledSample, SessionPlan
from fscil_model import Network, load_checkpoint
from fscil_utils import format_float, write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class AngleReport:
    psi_degrees: float
    mean_norms: Dict[int, float]
    n_classes: int
    dim: int

    def to_dict(self) -> Dict:
        return {
            'psi_degrees': self.psi_degrees,
            'n_classes': self.n_classes,
            'dim': self.dim,
            'mean_norms': {str(c): v for c, v in self.mean_norms.items()},
        }


def class_mean_features(
    network: Network,
    samples: Sequence[LabeledSample],
    classes: Sequence[int],
) -> Dict[int, np.ndarray]:
    """Unweighted mean of the extractor features of each class."""
    means: Dict[int, np.ndarray] = {}
    for c in classes:
        members = [s for s in samples if s.label == c]
        if not members:
            raise CapacityError('class has no samples', class_id=c)
        means[int(c)] = network.embed(members).mean(axis=0)
    return means


def psi(mean_features: Union[Mapping[int, np.ndarray], Sequence[np.ndarray]]) -> float:
    """
    Average pairwise angle in degrees between normalized mean features.

    Raises:
        ConfigurationError: If fewer than two means are given
        DegenerateVectorError: If a mean has near-zero norm
    """
    vectors = list(mean_features.values()) if isinstance(mean_features, Mapping) else list(mean_features)
    if len(vectors) < 2:
        raise ConfigurationError('psi needs at least two classes', n_classes=len(vectors))
    matrix = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DegenerateVectorError('class mean feature with near-zero norm', index=int(np.argmin(norms)))
    unit = matrix / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    upper = np.triu_indices(len(vectors), k=1)
    return float(np.degrees(np.arccos(cos[upper])).mean())


def min_angle_study(n: int, d: int, seed: int, memory_cap_mb: float = 256.0) -> float:
    """
    Mean over n random unit vectors of each one's smallest angle to the others.

    The n×n similarity pass is done in row chunks so the working block stays
    under memory_cap_mb.

    Args:
        n: Number of vectors (>= 2)
        d: Dimension (>= 2)
        seed: Random seed
        memory_cap_mb: Bound on the similarity block size

    Returns:
        Angle in degrees
    """
    if n < 2 or d < 2:
        raise ConfigurationError('min-angle study needs n >= 2 and d >= 2', n=n, d=d)
    if not memory_cap_mb > 0:
        raise ConfigurationError('memory cap must be positive', memory_cap_mb=memory_cap_mb)

    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n, d))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

    # Sized for two n-wide float64 rows per chunk row: the block plus matmul temporaries
    chunk = max(1, min(n, int(memory_cap_mb * 1024 * 1024 // (16 * n))))
    best_cos = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = vectors[start:stop] @ vectors.T
        block[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        best_cos[start:stop] = block.max(axis=1)
    angles = np.degrees(np.arccos(np.clip(best_cos, -1.0, 1.0)))
    result = float(angles.mean())
    logger.debug(f'min-angle study n={n} d={d} seed={seed}: {result:.4f} degrees ({chunk} rows per chunk)')
    return result


def angle_report(network: Network, samples: Sequence[LabeledSample], classes: Sequence[int]) -> AngleReport:
    means = class_mean_features(network, samples, classes)
    return AngleReport(
        psi_degrees=psi(means),
        mean_norms={c: float(np.linalg.norm(v)) for c, v in means.items()},
        n_classes=len(means),
        dim=network.config.feature_dim,
    )


def psi_trace(
    checkpoint_paths: Sequence[PathLike],
    samples: Sequence[LabeledSample],
    classes: Sequence[int],
) -> List[Dict]:
    """
    Evaluate psi at each checkpoint, in the given order.

    Raises:
        FileNotFoundError: If a checkpoint is missing
    """
    trace = []
    for path in checkpoint_paths:
        network, extra = load_checkpoint(path)
        value = psi(class_mean_features(network, samples, classes))
        trace.append({'checkpoint': Path(path).name, 'epoch': extra.get('epoch'), 'psi_degrees': value})
        logger.info(f'psi at {Path(path).name}: {value:.3f} degrees')
    return trace


def export_embeddings(network: Network, samples: Sequence[LabeledSample], path: PathLike) -> Path:
    """Write sample_id, label and one column per feature dimension."""
    if not samples:
        raise CapacityError('nothing to export')
    features = network.embed(samples)
    header = ['sample_id', 'label'] + [f'f{i}' for i in range(features.shape[1])]
    lines = [','.join(header)]
    for sample, row in zip(samples, features):
        lines.append(','.join([str(sample.source_id), str(sample.label)] + [format_float(v) for v in row]))
    return write_text(path, '\n'.join(lines) + '\n')


def load_embeddings(path: PathLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read an embedding export back as (sample_ids, labels, features)."""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:2] != ['sample_id', 'label']:
        raise SchemaError('not an embedding export', path=str(path))
    body = rows[1:]
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    features = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    return ids, labels, features


def base_to_new_ratio(network: Network, plan: SessionPlan, t: int) -> float:
    """
    Fraction of base-class test samples predicted as a class of sessions 2..t.
    """
    if t < 2:
        raise UndefinedMetricError('base-to-new ratio needs an incremental session', t=t)
    active = plan.active_classes(t)
    base_test = plan.test_split(plan.base_classes)
    if not base_test:
        raise CapacityError('no base test samples')
    predictions = network.predict(base_test, active)
    new_classes = set(active) - set(plan.base_classes)
    return float(np.mean([int(p) in new_classes for p in predictions]))


def expected_min_angle(n: int, d: int) -> float:
    """
    Rough analytic estimate of the min-angle study for large d.

    Pairwise cosines are close to N(0, 1/d); the expected maximum of n-1 of
    them gives the nearest-neighbour angle.
    """
    if n < 3:
        raise ConfigurationError('estimate needs n >= 3', n=n)
    k = math.sqrt(2.0 * math.log(n - 1))
    gumbel = k - (math.log(math.log(n - 1)) + math.log(4 * math.pi)) / (2 * k) + 0.5772156649 / k
    return math.degrees(math.acos(min(1.0, gumbel / math.sqrt(d))))
