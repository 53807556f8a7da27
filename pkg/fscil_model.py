"""
FSCIL Model - Feature extractor, projection head and classifier bank.

The extractor is a stack of affine+ReLU layers (the last one included), so
features are elementwise non-negative. The projection head is two affine
layers with a ReLU between them and unit-normalized output. Classifiers are
per-class vectors in feature space, scored by cosine similarity over tau_ce.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from fscil_base import (
    CapacityError,
    CheckpointError,
    ClassifierOrigin,
    ConfigurationError,
    ConflictError,
    DegenerateVectorError,
    DimensionError,
    LabelError,
)
from fscil_constants import DEFAULT_TAU_CE, DEFAULT_TIMING, EXTRACTOR_BIAS_INIT, NORM_EPS, SCORING_MODES
from fscil_data import LabeledSample, stack_features
from fscil_losses import LogitDistribution
from fscil_tensor import (
    ParamStore,
    Tensor,
    add_bias,
    as_tensor,
    l2_normalize_rows,
    matmul,
    relu,
    scale,
    stack_rows,
    transpose,
    xavier_uniform_init,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class NetworkConfig:
    d_in: int = 32
    hidden_dims: Tuple[int, ...] = (64, 64)
    feature_dim: int = 64
    projection_hidden: int = 64
    projection_dim: int = 32
    bias_init: float = EXTRACTOR_BIAS_INIT
    tau_ce: float = DEFAULT_TAU_CE
    scoring: str = 'cosine'
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        dims = (self.d_in, *self.hidden_dims, self.feature_dim, self.projection_hidden, self.projection_dim)
        if any(d <= 0 for d in dims):
            raise ConfigurationError('layer sizes must be positive', dims=dims)
        if not self.tau_ce > 0:
            raise ConfigurationError('tau_ce must be positive', tau_ce=self.tau_ce)
        if self.scoring not in SCORING_MODES:
            raise ConfigurationError(f'scoring must be one of {SCORING_MODES}', scoring=self.scoring)

    @property
    def extractor_dims(self) -> Tuple[int, ...]:
        return (self.d_in, *self.hidden_dims, self.feature_dim)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['hidden_dims'] = list(self.hidden_dims)
        return data


# =============================================================================
# CLASSIFIER BANK
# =============================================================================

class ClassifierBank:
    """Per-class weight vectors in insertion (session) order, with origin tags."""

    def __init__(self, dim: int):
        self.dim = dim
        self._vectors: Dict[int, Tensor] = {}
        self._origins: Dict[int, ClassifierOrigin] = {}
        self._sessions: Dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, class_id: int) -> bool:
        return int(class_id) in self._vectors

    @property
    def class_ids(self) -> List[int]:
        return list(self._vectors)

    def add(self, class_id: int, vector: np.ndarray, origin: ClassifierOrigin, session: int) -> None:
        class_id = int(class_id)
        if class_id in self._vectors:
            raise ConflictError('classifier already present', class_id=class_id)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionError('classifier dimension differs from the feature dimension',
                                 class_id=class_id, shape=vector.shape, dim=self.dim)
        self._vectors[class_id] = Tensor(vector, name=f'classifier.{class_id}')
        self._origins[class_id] = origin
        self._sessions[class_id] = int(session)

    def clear(self) -> None:
        self._vectors.clear()
        self._origins.clear()
        self._sessions.clear()

    def tensor(self, class_id: int) -> Tensor:
        try:
            return self._vectors[int(class_id)]
        except KeyError:
            raise LabelError('no classifier for class', class_id=class_id)

    def vector(self, class_id: int) -> np.ndarray:
        return self.tensor(class_id).value.copy()

    def matrix(self, class_ids: Sequence[int]) -> np.ndarray:
        return np.stack([self.tensor(c).value for c in class_ids])

    def origin(self, class_id: int) -> ClassifierOrigin:
        return self._origins[int(class_id)]

    def set_origin(self, class_id: int, origin: ClassifierOrigin) -> None:
        self.tensor(class_id)
        self._origins[int(class_id)] = origin

    def session(self, class_id: int) -> int:
        return self._sessions[int(class_id)]

    def params_store(self, class_ids: Optional[Sequence[int]] = None) -> ParamStore:
        """Expose classifiers as trainable parameters named classifier.<id>."""
        ids = self.class_ids if class_ids is None else [int(c) for c in class_ids]
        return ParamStore({f'classifier.{c}': self.tensor(c) for c in ids})

    def fingerprint(self, class_ids: Optional[Sequence[int]] = None) -> str:
        digest = hashlib.sha256()
        for c in (self.class_ids if class_ids is None else class_ids):
            digest.update(str(int(c)).encode())
            digest.update(self.tensor(c).value.tobytes())
        return digest.hexdigest()


# =============================================================================
# NETWORK
# =============================================================================

class Network:
    """
    Extractor f, projection head h and classifier bank w.

    Parameters are named extractor.<i>.weight/bias and head.<i>.weight/bias.
    Weight matrices are stored input-by-output so a forward layer is x @ W + b.
    """

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.params = ParamStore()
        dims = config.extractor_dims
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.params.add(f'extractor.{i}.weight', xavier_uniform_init((fan_in, fan_out), [config.seed, 0, i]))
            self.params.add(f'extractor.{i}.bias', Tensor(np.full(fan_out, config.bias_init)))
        head_dims = (config.feature_dim, config.projection_hidden, config.projection_dim)
        for i, (fan_in, fan_out) in enumerate(zip(head_dims[:-1], head_dims[1:])):
            self.params.add(f'head.{i}.weight', xavier_uniform_init((fan_in, fan_out), [config.seed, 1, i]))
            self.params.add(f'head.{i}.bias', Tensor(np.zeros(fan_out)))
        self.classifiers = ClassifierBank(config.feature_dim)

    @property
    def num_extractor_layers(self) -> int:
        return len(self.config.extractor_dims) - 1

    def extractor_params(self) -> ParamStore:
        return self.params.select(['extractor.'])

    def head_params(self) -> ParamStore:
        return self.params.select(['head.'])

    def forward_features(self, inputs) -> Tensor:
        x = as_tensor(inputs)
        if x.value.ndim != 2 or x.shape[1] != self.config.d_in:
            raise DimensionError('input dimension differs from d_in', shape=x.shape, d_in=self.config.d_in)
        for i in range(self.num_extractor_layers):
            x = relu(add_bias(matmul(x, self.params[f'extractor.{i}.weight']), self.params[f'extractor.{i}.bias']))
        return x

    def forward_projection(self, features) -> Tensor:
        z = as_tensor(features)
        if z.value.ndim != 2 or z.shape[1] != self.config.feature_dim:
            raise DimensionError('feature dimension differs from D', shape=z.shape, dim=self.config.feature_dim)
        hidden = relu(add_bias(matmul(z, self.params['head.0.weight']), self.params['head.0.bias']))
        out = add_bias(matmul(hidden, self.params['head.1.weight']), self.params['head.1.bias'])
        return l2_normalize_rows(out)

    def class_logits(self, features, class_ids: Sequence[int]) -> Tensor:
        """B×C logits, columns in the order of class_ids."""
        class_ids = list(class_ids)
        if not class_ids:
            raise ConfigurationError('no active classes to score')
        z = as_tensor(features)
        weights = stack_rows([self.classifiers.tensor(c) for c in class_ids])
        if self.config.scoring == 'dot':
            return matmul(z, transpose(weights))
        z_unit = l2_normalize_rows(z, floor=NORM_EPS)
        w_unit = l2_normalize_rows(weights, floor=NORM_EPS)
        return scale(matmul(z_unit, transpose(w_unit)), 1.0 / self.config.tau_ce)

    def embed(self, samples: Sequence[LabeledSample]) -> np.ndarray:
        """Feature matrix of the samples, without gradient tracking."""
        if not samples:
            return np.zeros((0, self.config.feature_dim))
        x = stack_features(samples)
        if x.shape[1] != self.config.d_in:
            raise DimensionError('input dimension differs from d_in', shape=x.shape, d_in=self.config.d_in)
        for i in range(self.num_extractor_layers):
            x = np.maximum(x @ self.params[f'extractor.{i}.weight'].value + self.params[f'extractor.{i}.bias'].value, 0.0)
        return x

    def scores(self, features: np.ndarray, class_ids: Sequence[int]) -> np.ndarray:
        """Numpy logits for evaluation."""
        class_ids = list(class_ids)
        if not class_ids:
            raise ConfigurationError('no active classes to score')
        weights = self.classifiers.matrix(class_ids)
        if self.config.scoring == 'dot':
            return features @ weights.T
        z = features / np.maximum(np.linalg.norm(features, axis=1, keepdims=True), NORM_EPS)
        w = weights / np.maximum(np.linalg.norm(weights, axis=1, keepdims=True), NORM_EPS)
        return z @ w.T / self.config.tau_ce

    def predict(self, samples: Sequence[LabeledSample], class_ids: Sequence[int]) -> np.ndarray:
        """Predicted class per sample; ties go to the lowest class id."""
        ordered = sorted(int(c) for c in class_ids)
        if not ordered:
            raise ConfigurationError('no active classes to score')
        scores = self.scores(self.embed(samples), ordered)
        return np.asarray(ordered, dtype=np.int64)[np.argmax(scores, axis=1)]

    def frozen_copy(self) -> 'Network':
        """Independent copy whose tensors never require gradients."""
        copy = Network.__new__(Network)
        copy.config = self.config
        copy.params = ParamStore()
        for name, tensor in self.params.params.items():
            copy.params.add(name, Tensor(tensor.value.copy()))
        copy.classifiers = ClassifierBank(self.config.feature_dim)
        for c in self.classifiers.class_ids:
            copy.classifiers.add(c, self.classifiers.vector(c), self.classifiers.origin(c), self.classifiers.session(c))
        for tensor in copy.params.params.values():
            tensor.requires_grad = False
        return copy

    def zero_grad(self) -> None:
        self.params.zero_grad()
        self.classifiers.params_store().zero_grad()

    def fingerprint(self, prefixes: Sequence[str] = ('extractor.',)) -> str:
        return self.params.select(prefixes).fingerprint()


# =============================================================================
# MODULE-LEVEL OPERATIONS
# =============================================================================

def forward_features(network: Network, inputs) -> Tensor:
    return network.forward_features(inputs)


def forward_projection(network: Network, features) -> Tensor:
    return network.forward_projection(features)


def _group(samples: Sequence[LabeledSample], classes: Sequence[int]) -> Dict[int, List[LabeledSample]]:
    groups: Dict[int, List[LabeledSample]] = {int(c): [] for c in classes}
    for sample in samples:
        if sample.label in groups:
            groups[sample.label].append(sample)
    return groups


def init_classifiers_from_means(
    network: Network,
    samples: Sequence[LabeledSample],
    classes: Sequence[int],
    session: int,
) -> ClassifierBank:
    """
    Set w_c to the mean of the l2-normalized features of class c.

    Args:
        network: Network whose extractor produces the features
        samples: Training split containing the classes
        classes: Classes to install, in session order
        session: Session index recorded on the entries

    Returns:
        The updated bank
    """
    groups = _group(samples, classes)
    for c in classes:
        if int(c) in network.classifiers:
            raise ConflictError('classifier already present', class_id=c)
        if not groups[int(c)]:
            raise CapacityError('class has no training samples', class_id=c)

    for c in classes:
        features = network.embed(groups[int(c)])
        norms = np.linalg.norm(features, axis=1)
        if np.any(norms <= NORM_EPS):
            raise DegenerateVectorError('feature with near-zero norm', class_id=c)
        mean = np.mean(features / norms[:, None], axis=0)
        network.classifiers.add(c, mean, ClassifierOrigin.MEAN_INIT, session)
    logger.debug(f'Mean-initialized {len(classes)} classifiers for session {session}')
    return network.classifiers


def init_classifiers_random(
    network: Network,
    classes: Sequence[int],
    seed: int,
    session: int = 1,
) -> ClassifierBank:
    """Xavier-uniform classifiers, drawn as one D×|C| matrix."""
    for c in classes:
        if int(c) in network.classifiers:
            raise ConflictError('classifier already present', class_id=c)
    if not classes:
        return network.classifiers
    matrix = xavier_uniform_init((network.config.feature_dim, len(classes)), [seed, 2]).value
    for column, c in enumerate(classes):
        network.classifiers.add(c, matrix[:, column], ClassifierOrigin.RANDOM_INIT, session)
    return network.classifiers


def logits(network: Network, features, active_classes: Sequence[int]) -> List[LogitDistribution]:
    """One LogitDistribution per feature row over the active classes."""
    values = features.value if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    scores = network.scores(values, active_classes)
    return [LogitDistribution(row, active_classes) for row in scores]


# =============================================================================
# CHECKPOINTS
# =============================================================================

@retry(
    stop=stop_after_attempt(DEFAULT_TIMING['file_retry_attempts']),
    wait=wait_fixed(DEFAULT_TIMING['file_retry_wait']),
    retry=retry_if_exception_type((PermissionError, BlockingIOError)),
    reraise=True,
)
def save_checkpoint(network: Network, path: PathLike, extra: Optional[Dict] = None) -> Path:
    """
    Write parameters, classifiers and their origin tags to an .npz file.

    Args:
        network: Network to save
        path: Destination file
        extra: Additional JSON-serializable metadata (e.g. phase, epoch)

    Returns:
        The written path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        'config': network.config.to_dict(),
        'classifiers': [
            {'class_id': c, 'origin': network.classifiers.origin(c).value, 'session': network.classifiers.session(c)}
            for c in network.classifiers.class_ids
        ],
        'extra': extra or {},
    }
    arrays = {f'param/{name}': t.value for name, t in network.params.params.items()}
    arrays.update({f'classifier/{c}': network.classifiers.tensor(c).value for c in network.classifiers.class_ids})
    arrays['__meta__'] = np.array(json.dumps(meta, sort_keys=True))
    with open(target, 'wb') as f:
        np.savez(f, **arrays)
    logger.debug(f'Saved checkpoint {target}')
    return target


def load_checkpoint(path: PathLike) -> Tuple[Network, Dict]:
    """
    Restore a network saved by save_checkpoint.

    Returns:
        (network, extra metadata)
    """
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(str(source))
    try:
        with np.load(source, allow_pickle=False) as data:
            meta = json.loads(str(data['__meta__']))
            config_data = dict(meta['config'])
            config_data['hidden_dims'] = tuple(config_data['hidden_dims'])
            network = Network(NetworkConfig(**config_data))
            for name in network.params.names():
                stored = data[f'param/{name}']
                if stored.shape != network.params[name].shape:
                    raise CheckpointError('parameter shape mismatch', name=name)
                network.params[name].value = stored.copy()
            for entry in meta['classifiers']:
                c = int(entry['class_id'])
                network.classifiers.add(c, data[f'classifier/{c}'].copy(),
                                        ClassifierOrigin(entry['origin']), entry['session'])
    except CheckpointError:
        raise
    except (KeyError, ValueError, TypeError, OSError) as e:
        raise CheckpointError(f'unreadable checkpoint: {e}', path=str(source))
    return network, meta.get('extra', {})
