"""
FSCIL Data - Datasets, session plans and vector-space augmentations.

Provides:
- Synthetic Gaussian-cluster datasets and per-class train/test splits
- CSV and IDX ingestion plus CSV export
- Session plans (base classes followed by N-way K-shot incremental sessions)
- Stochastic augmentations keyed by (seed, source_id, draw_index)
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fscil_base import (
    AugmentationShapeError,
    CapacityError,
    ConfigurationError,
    DatasetParseError,
    DisjointnessError,
    SchemaError,
)
from fscil_constants import IDX_DTYPES
from fscil_utils import format_float, write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# =============================================================================
# SAMPLES AND DATASETS
# =============================================================================

@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One item: raw feature vector, class label and unique source id."""
    features: np.ndarray
    label: int
    source_id: int


@dataclass
class Dataset:
    """An ordered collection of samples with a common input dimension."""
    samples: List[LabeledSample]
    d_in: int
    grid_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        seen = set()
        for sample in self.samples:
            if sample.features.shape != (self.d_in,):
                raise SchemaError('feature dimension differs from d_in',
                                  source_id=sample.source_id, d_in=self.d_in)
            if sample.source_id in seen:
                raise SchemaError('duplicate source id', source_id=sample.source_id)
            seen.add(sample.source_id)
        if self.grid_shape is not None and self.grid_shape[0] * self.grid_shape[1] != self.d_in:
            raise SchemaError('grid shape does not cover d_in', grid_shape=self.grid_shape, d_in=self.d_in)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def classes(self) -> List[int]:
        return sorted({s.label for s in self.samples})

    def by_class(self) -> Dict[int, List[LabeledSample]]:
        groups: Dict[int, List[LabeledSample]] = {}
        for sample in self.samples:
            groups.setdefault(sample.label, []).append(sample)
        return groups


def stack_features(samples: Sequence[LabeledSample]) -> np.ndarray:
    """Return the B×d_in matrix of sample features."""
    return np.stack([s.features for s in samples])


def generate_gaussian_clusters(
    num_classes: int,
    d_in: int,
    samples_per_class: int,
    cluster_std: float,
    seed: int,
) -> Dataset:
    """
    Draw class means on the unit sphere and add isotropic Gaussian noise.

    Source ids run from 0 in class-major order.

    Args:
        num_classes: Number of classes
        d_in: Input dimension
        samples_per_class: Samples per class
        cluster_std: Noise standard deviation (0 gives exact means)
        seed: Random seed

    Returns:
        Dataset of num_classes * samples_per_class samples
    """
    if num_classes <= 0 or d_in <= 0 or samples_per_class <= 0:
        raise ConfigurationError('counts must be positive',
                                 num_classes=num_classes, d_in=d_in, samples_per_class=samples_per_class)
    if cluster_std < 0:
        raise ConfigurationError('cluster std must be non-negative', cluster_std=cluster_std)

    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, d_in))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    samples = []
    for label in range(num_classes):
        noise = rng.standard_normal((samples_per_class, d_in)) * cluster_std
        for row in means[label] + noise:
            samples.append(LabeledSample(row, label, len(samples)))
    logger.debug(f'Generated {len(samples)} samples over {num_classes} classes (d_in={d_in})')
    return Dataset(samples, d_in)


def split_train_test(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Split every class separately, keeping at least one training sample.

    Args:
        dataset: Source dataset
        test_fraction: Fraction of each class routed to the test split
        seed: Random seed; each class uses its own keyed stream

    Returns:
        (train, test) datasets preserving the original sample order
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError('test fraction must be in [0, 1)', test_fraction=test_fraction)
    test_ids = set()
    for label, members in dataset.by_class().items():
        n_test = min(int(round(test_fraction * len(members))), len(members) - 1)
        if n_test <= 0:
            continue
        rng = np.random.default_rng([seed, label])
        picks = rng.choice(len(members), size=n_test, replace=False)
        test_ids.update(members[i].source_id for i in picks)
    train = [s for s in dataset.samples if s.source_id not in test_ids]
    test = [s for s in dataset.samples if s.source_id in test_ids]
    return Dataset(train, dataset.d_in, dataset.grid_shape), Dataset(test, dataset.d_in, dataset.grid_shape)


# =============================================================================
# INGESTION AND EXPORT
# =============================================================================

def _load_csv(path: Path, d_in: Optional[int], id_offset: int) -> Dataset:
    samples = []
    width = None
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for line_number, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                label = int(row[0].strip())
                values = [float(cell) for cell in row[1:]]
            except ValueError as e:
                if line_number == 1 and not samples:
                    # Header row
                    continue
                raise DatasetParseError(str(e), line_number)
            if label < 0:
                raise DatasetParseError('labels must be non-negative', line_number)
            if not values:
                raise SchemaError('row has a label but no features', line=line_number)
            if width is None:
                width = len(values)
            if len(values) != width or (d_in is not None and len(values) != d_in):
                raise SchemaError('feature count differs between rows',
                                  line=line_number, expected=d_in or width, found=len(values))
            samples.append(LabeledSample(np.array(values, dtype=np.float64), label, id_offset + len(samples)))
    if not samples:
        raise SchemaError('dataset file holds no samples', path=str(path))
    return Dataset(samples, width)


def _read_idx(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DatasetParseError('bad IDX magic number', 1)
    code, ndim = raw[2], raw[3]
    if code not in IDX_DTYPES:
        raise DatasetParseError(f'unknown IDX dtype code 0x{code:02x}', 1)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise SchemaError('IDX header truncated', path=str(path))
    dims = tuple(int(d) for d in np.frombuffer(raw[4:header_end], dtype='>u4'))
    dtype = np.dtype(IDX_DTYPES[code])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise SchemaError('IDX payload size does not match header', dims=dims, payload=len(raw) - header_end)
    return np.frombuffer(raw[header_end:], dtype=dtype).reshape(dims)


def _load_idx(images_path: Path, labels_path: Optional[PathLike], id_offset: int) -> Dataset:
    if labels_path is None:
        raise ConfigurationError('IDX ingestion needs a labels file')
    images = _read_idx(images_path)
    labels = _read_idx(Path(labels_path)).reshape(-1)
    if images.ndim < 2 or images.shape[0] != labels.shape[0]:
        raise SchemaError('image and label counts differ', images=images.shape, labels=labels.shape)
    flat = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.dtype('>u1'):
        flat /= 255.0
    grid_shape = (int(images.shape[1]), int(images.shape[2])) if images.ndim == 3 else None
    samples = [LabeledSample(flat[i].copy(), int(labels[i]), id_offset + i) for i in range(flat.shape[0])]
    return Dataset(samples, flat.shape[1], grid_shape)


def load_dataset(
    path: PathLike,
    fmt: str = 'csv',
    labels_path: Optional[PathLike] = None,
    d_in: Optional[int] = None,
    id_offset: int = 0,
) -> Dataset:
    """
    Load a dataset from disk.

    Args:
        path: CSV file, or IDX images file
        fmt: 'csv' or 'idx'
        labels_path: IDX labels file (idx only)
        d_in: Expected feature dimension (optional)
        id_offset: First source id; a separate test file starts after the train ids

    Returns:
        Dataset with source ids assigned by row order from id_offset
    """
    if id_offset < 0:
        raise ConfigurationError('id offset must be non-negative', id_offset=id_offset)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if fmt == 'csv':
        dataset = _load_csv(path, d_in, id_offset)
    elif fmt == 'idx':
        dataset = _load_idx(path, labels_path, id_offset)
        if d_in is not None and dataset.d_in != d_in:
            raise SchemaError('IDX image size differs from d_in', d_in=d_in, found=dataset.d_in)
    else:
        raise ConfigurationError("format must be 'csv' or 'idx'", fmt=fmt)
    logger.info(f'Loaded {len(dataset)} samples from {path} (d_in={dataset.d_in})')
    return dataset


def export_dataset_csv(dataset: Dataset, path: PathLike) -> Path:
    """Write label plus features per row; load_dataset reads it back exactly."""
    lines = [','.join([str(s.label)] + [format_float(v) for v in s.features]) for s in dataset.samples]
    return write_text(path, '\n'.join(lines) + '\n')


# =============================================================================
# SESSION PLAN
# =============================================================================

@dataclass
class SessionPlan:
    """
    Class partition and per-session splits.

    Session 1 holds the base classes with their full training split; each later
    session holds `ways` classes with exactly `shots` training samples each.
    """
    base_classes: Tuple[int, ...]
    incremental_sessions: List[Tuple[int, ...]]
    shots: int
    ways: int
    seed: int
    train_splits: Dict[int, List[LabeledSample]] = field(default_factory=dict)
    test_samples: List[LabeledSample] = field(default_factory=list)
    d_in: int = 0
    grid_shape: Optional[Tuple[int, int]] = None

    @property
    def num_sessions(self) -> int:
        return 1 + len(self.incremental_sessions)

    def session_classes(self, t: int) -> Tuple[int, ...]:
        if not 1 <= t <= self.num_sessions:
            raise ConfigurationError('session index out of range', t=t, sessions=self.num_sessions)
        return self.base_classes if t == 1 else self.incremental_sessions[t - 2]

    def active_classes(self, t: int) -> List[int]:
        """Classes of sessions 1..t in session order."""
        active: List[int] = []
        for s in range(1, t + 1):
            active.extend(self.session_classes(s))
        return active

    def train_split(self, t: int) -> List[LabeledSample]:
        return list(self.train_splits[t])

    def test_split(self, classes: Sequence[int]) -> List[LabeledSample]:
        wanted = set(classes)
        return [s for s in self.test_samples if s.label in wanted]

    def check_disjoint(self) -> None:
        seen = set(self.base_classes)
        for t, classes in enumerate(self.incremental_sessions, start=2):
            overlap = seen.intersection(classes)
            if overlap or len(set(classes)) != len(classes):
                raise DisjointnessError('session classes overlap', session=t, classes=sorted(overlap))
            seen.update(classes)


def make_session_plan(
    dataset: Dataset,
    num_base_classes: int,
    ways: int,
    shots: int,
    num_sessions: int,
    seed: int,
    test_dataset: Optional[Dataset] = None,
    test_fraction: float = 0.2,
) -> SessionPlan:
    """
    Partition classes into sessions and draw the few-shot training splits.

    When no test dataset is given the data is first split per class with
    test_fraction. Test samples are never subsampled.

    Args:
        dataset: Training data (or all data if test_dataset is None)
        num_base_classes: Size of the base class set
        ways: Classes per incremental session
        shots: Training samples per incremental class
        num_sessions: Total sessions including the base session
        seed: Random seed
        test_dataset: Optional separate test data
        test_fraction: Per-class test fraction when splitting

    Returns:
        SessionPlan

    Raises:
        CapacityError: If classes or samples are insufficient
        SchemaError: If a separate test set reuses train source ids
    """
    if num_base_classes <= 0 or num_sessions <= 0:
        raise CapacityError('need at least one base class and one session',
                            num_base_classes=num_base_classes, num_sessions=num_sessions)
    if num_sessions > 1 and (ways <= 0 or shots <= 0):
        raise CapacityError('ways and shots must be positive', ways=ways, shots=shots)

    if test_dataset is None:
        train, test = split_train_test(dataset, test_fraction, seed)
    else:
        train, test = dataset, test_dataset
        shared = {s.source_id for s in train.samples} & {s.source_id for s in test.samples}
        if shared:
            raise SchemaError('train and test source ids overlap', count=len(shared))

    classes = train.classes
    needed = num_base_classes + ways * (num_sessions - 1)
    if needed > len(classes):
        raise CapacityError('not enough classes for the plan', needed=needed, available=len(classes))

    rng = np.random.default_rng(seed)
    order = [classes[i] for i in rng.permutation(len(classes))]
    base = tuple(sorted(order[:num_base_classes]))
    sessions = []
    cursor = num_base_classes
    for _ in range(num_sessions - 1):
        sessions.append(tuple(sorted(order[cursor:cursor + ways])))
        cursor += ways

    groups = train.by_class()
    base_set = set(base)
    splits: Dict[int, List[LabeledSample]] = {1: [s for s in train.samples if s.label in base_set]}
    for t, session in enumerate(sessions, start=2):
        chosen: List[LabeledSample] = []
        for label in session:
            members = groups[label]
            if len(members) < shots:
                raise CapacityError('not enough training samples for the shot count',
                                    label=label, available=len(members), shots=shots)
            picks = np.sort(np.random.default_rng([seed, t, label]).choice(len(members), size=shots, replace=False))
            chosen.extend(members[i] for i in picks)
        splits[t] = chosen

    plan = SessionPlan(base, sessions, shots, ways, seed, splits, list(test.samples), train.d_in, train.grid_shape)
    plan.check_disjoint()
    logger.info(
        f'Session plan: {len(base)} base classes, {len(sessions)} incremental sessions '
        f'({ways}-way {shots}-shot), {len(test)} test samples'
    )
    return plan


# =============================================================================
# AUGMENTATIONS
# =============================================================================

class AugmentationOp:
    """One stochastic transform of a feature vector."""
    grid_only = False

    def apply(self, x: np.ndarray, rng: np.random.Generator, grid_shape: Optional[Tuple[int, int]]) -> np.ndarray:
        raise NotImplementedError

    def _grid(self, x: np.ndarray, grid_shape: Optional[Tuple[int, int]]) -> np.ndarray:
        if grid_shape is None:
            raise AugmentationShapeError(f'{type(self).__name__} needs grid-shaped input', dim=x.shape[0])
        return x.reshape(grid_shape)


@dataclass
class GaussianNoise(AugmentationOp):
    sigma: float = 0.05

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigurationError('sigma must be non-negative', sigma=self.sigma)

    def apply(self, x, rng, grid_shape):
        if self.sigma == 0:
            return x
        return x + rng.standard_normal(x.shape) * self.sigma


@dataclass
class RandomScale(AugmentationOp):
    lo: float = 0.9
    hi: float = 1.1

    def __post_init__(self):
        if not 0 < self.lo <= self.hi:
            raise ConfigurationError('scale bounds need 0 < lo <= hi', lo=self.lo, hi=self.hi)

    def apply(self, x, rng, grid_shape):
        return x * rng.uniform(self.lo, self.hi)


@dataclass
class CoordinateMask(AugmentationOp):
    probability: float = 0.1

    def __post_init__(self):
        _check_probability(self.probability)

    def apply(self, x, rng, grid_shape):
        keep = rng.random(x.shape) >= self.probability
        return np.where(keep, x, 0.0)


@dataclass
class RandomCropShift(AugmentationOp):
    """Shift the grid by up to max_shift cells per axis, zero-filling."""
    max_shift: int = 2
    grid_only = True

    def __post_init__(self):
        if self.max_shift < 0:
            raise ConfigurationError('max shift must be non-negative', max_shift=self.max_shift)

    def apply(self, x, rng, grid_shape):
        grid = self._grid(x, grid_shape)
        dy, dx = rng.integers(-self.max_shift, self.max_shift + 1, size=2)
        shifted = np.zeros_like(grid)
        h, w = grid.shape
        if abs(dy) >= h or abs(dx) >= w:
            # Shifted entirely off the grid
            return shifted.reshape(-1)
        src_y = slice(max(0, -dy), min(h, h - dy))
        dst_y = slice(max(0, dy), min(h, h + dy))
        src_x = slice(max(0, -dx), min(w, w - dx))
        dst_x = slice(max(0, dx), min(w, w + dx))
        shifted[dst_y, dst_x] = grid[src_y, src_x]
        return shifted.reshape(-1)


@dataclass
class HorizontalFlip(AugmentationOp):
    probability: float = 0.5
    grid_only = True

    def __post_init__(self):
        _check_probability(self.probability)

    def apply(self, x, rng, grid_shape):
        grid = self._grid(x, grid_shape)
        if rng.random() < self.probability:
            grid = grid[:, ::-1]
        return np.ascontiguousarray(grid).reshape(-1)


def _check_probability(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError('probability must be in [0, 1]', probability=p)


AUGMENTATION_OPS = {
    'gaussian_noise': GaussianNoise,
    'random_scale': RandomScale,
    'coordinate_mask': CoordinateMask,
    'random_crop_shift': RandomCropShift,
    'horizontal_flip': HorizontalFlip,
}


@dataclass
class AugmentationConfig:
    """Ordered augmentation ops and the seed of their random streams."""
    ops: List[AugmentationOp] = field(default_factory=list)
    rng_seed: int = 0

    @classmethod
    def from_specs(cls, specs: Sequence[Dict], rng_seed: int = 0) -> 'AugmentationConfig':
        """Build from [{'op': 'gaussian_noise', 'sigma': 0.05}, ...]."""
        ops = []
        for spec in specs:
            params = dict(spec)
            name = params.pop('op', None)
            if name not in AUGMENTATION_OPS:
                raise ConfigurationError(f'unknown augmentation op; expected one of {sorted(AUGMENTATION_OPS)}', op=name)
            try:
                ops.append(AUGMENTATION_OPS[name](**params))
            except TypeError as e:
                raise ConfigurationError(f'bad parameters for {name}: {e}')
        return cls(ops, rng_seed)


def augment(
    sample: LabeledSample,
    config: AugmentationConfig,
    draw_index: int,
    grid_shape: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """
    Produce one augmented view of a sample.

    Randomness is keyed by (config seed, source_id, draw_index), so a view does
    not depend on what else is in the batch.

    Args:
        sample: Source sample
        config: Augmentation config
        draw_index: Index distinguishing views and epochs
        grid_shape: (height, width) for grid-only ops

    Returns:
        New feature vector of the same dimension
    """
    x = sample.features.copy()
    if not config.ops:
        return x
    rng = np.random.default_rng([config.rng_seed, sample.source_id, draw_index])
    for op in config.ops:
        x = op.apply(x, rng, grid_shape)
    return np.asarray(x, dtype=np.float64)
