"""
FSCIL Configuration - Run configuration sections, defaults and validation.

A run configuration is a JSON document with the sections data, session_plan,
model, pretrain, finetune, evaluation, analysis, gradcheck, seeds and
output_dir. Every key is optional; missing keys take the defaults below and
unknown keys are rejected with their dotted path.
"""

import dataclasses
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from fscil_base import ConfigurationError, ConfigValidationError
from fscil_constants import (
    BASE_INIT_MODES,
    CONTRASTIVE_VARIANTS,
    DATA_SOURCES,
    DEFAULT_LAMBDA,
    DEFAULT_TAU,
    DEFAULT_TAU_CE,
    EXTRACTOR_BIAS_INIT,
    LOSS_VARIANTS,
    OUTPUT_DIR_ENV_VAR,
    SCORING_MODES,
)
from fscil_data import AugmentationConfig
from fscil_optim import OptimizerConfig

logger = logging.getLogger(__name__)

# =============================================================================
# DEFAULT AUGMENTATION - Vector-space stand-ins for crop/scale/jitter
# =============================================================================

DEFAULT_AUGMENTATION: List[Dict[str, Any]] = [
    {'op': 'gaussian_noise', 'sigma': 0.05},
    {'op': 'random_scale', 'lo': 0.9, 'hi': 1.1},
    {'op': 'coordinate_mask', 'probability': 0.1},
]


# =============================================================================
# SECTIONS
# =============================================================================

@dataclass
class DataConfig:
    source: str = 'synthetic'
    num_classes: int = 60
    d_in: int = 32
    samples_per_class: int = 60
    cluster_std: float = 0.1
    test_fraction: float = 0.2
    path: Optional[str] = None
    labels_path: Optional[str] = None
    test_path: Optional[str] = None
    test_labels_path: Optional[str] = None

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigurationError(f'source must be one of {DATA_SOURCES}', source=self.source)
        if self.source != 'synthetic' and not self.path:
            raise ConfigurationError('path is required for file sources', source=self.source)
        if self.source == 'idx' and not self.labels_path:
            raise ConfigurationError('labels_path is required for idx data')
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigurationError('test_fraction must be in [0, 1)', test_fraction=self.test_fraction)


@dataclass
class SessionPlanConfig:
    num_base_classes: int = 20
    ways: int = 5
    shots: int = 5
    num_sessions: int = 9

    def __post_init__(self):
        if self.num_base_classes < 1 or self.num_sessions < 1:
            raise ConfigurationError('num_base_classes and num_sessions must be at least 1')
        if self.num_sessions > 1 and (self.ways < 1 or self.shots < 1):
            raise ConfigurationError('ways and shots must be at least 1')


@dataclass
class ModelConfig:
    hidden_dims: Tuple[int, ...] = (64, 64)
    feature_dim: int = 64
    projection_hidden: int = 64
    projection_dim: int = 32
    bias_init: float = EXTRACTOR_BIAS_INIT
    tau_ce: float = DEFAULT_TAU_CE
    scoring: str = 'cosine'

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.scoring not in SCORING_MODES:
            raise ConfigurationError(f'scoring must be one of {SCORING_MODES}', scoring=self.scoring)
        if not self.tau_ce > 0:
            raise ConfigurationError('tau_ce must be positive', tau_ce=self.tau_ce)


def _default_pretrain_optimizer() -> OptimizerConfig:
    return OptimizerConfig(learning_rate=0.1, momentum=0.9, weight_decay=5e-4, schedule='step', gamma=0.1)


def _default_finetune_optimizer() -> OptimizerConfig:
    return OptimizerConfig(learning_rate=0.05, momentum=0.9, weight_decay=5e-4, schedule='cosine')


@dataclass
class PretrainConfig:
    epochs: int = 200
    batch_size: int = 64
    loss: str = 'bsc'
    views: int = 3
    alpha: float = 1.2
    tau: float = DEFAULT_TAU
    use_head: bool = True
    optimizer: OptimizerConfig = field(default_factory=_default_pretrain_optimizer)
    augmentation: List[Dict[str, Any]] = field(default_factory=lambda: [dict(op) for op in DEFAULT_AUGMENTATION])

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError('epochs must be non-negative', epochs=self.epochs)
        if self.loss not in LOSS_VARIANTS:
            raise ConfigurationError(f'loss must be one of {LOSS_VARIANTS}', loss=self.loss)
        if self.batch_size < 1:
            raise ConfigurationError('batch_size must be positive', batch_size=self.batch_size)
        if self.is_contrastive:
            if self.batch_size < 2:
                raise ConfigurationError('contrastive pre-training needs batch_size >= 2', batch_size=self.batch_size)
            if self.views < 2:
                raise ConfigurationError('contrastive pre-training needs views >= 2', views=self.views)
        if not self.tau > 0 or not self.alpha > 0:
            raise ConfigurationError('tau and alpha must be positive', tau=self.tau, alpha=self.alpha)
        AugmentationConfig.from_specs(self.augmentation)

    @property
    def is_contrastive(self) -> bool:
        return self.loss in CONTRASTIVE_VARIANTS


@dataclass
class FinetuneConfig:
    enabled: bool = True
    epochs: int = 10
    batch_size: int = 64
    views: Optional[int] = None
    lam: float = DEFAULT_LAMBDA
    cskd: bool = True
    base_init: str = 'mean'
    optimizer: OptimizerConfig = field(default_factory=_default_finetune_optimizer)
    # None reuses the pre-training augmentation
    augmentation: Optional[List[Dict[str, Any]]] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError('epochs must be non-negative', epochs=self.epochs)
        if self.batch_size < 1:
            raise ConfigurationError('batch_size must be positive', batch_size=self.batch_size)
        if self.views is not None and self.views < 1:
            raise ConfigurationError('views must be positive', views=self.views)
        if self.lam < 0:
            raise ConfigurationError('lam must be non-negative', lam=self.lam)
        if self.base_init not in BASE_INIT_MODES:
            raise ConfigurationError(f'base_init must be one of {BASE_INIT_MODES}', base_init=self.base_init)
        if self.augmentation is not None:
            AugmentationConfig.from_specs(self.augmentation)


@dataclass
class EvaluationConfig:
    # Pre-training epochs between checkpoints; 0 keeps only phase-end checkpoints
    checkpoint_every: int = 0
    save_checkpoints: bool = True
    export_embeddings: bool = False

    def __post_init__(self):
        if self.checkpoint_every < 0:
            raise ConfigurationError('checkpoint_every must be non-negative')


@dataclass
class AnalysisConfig:
    angle_report: bool = True
    psi_trace: bool = False
    memory_cap_mb: float = 256.0

    def __post_init__(self):
        if not self.memory_cap_mb > 0:
            raise ConfigurationError('memory_cap_mb must be positive')


@dataclass
class GradcheckConfig:
    n_sources: int = 4
    num_classes: int = 2
    views: int = 3
    d_in: int = 6
    hidden_dims: Tuple[int, ...] = (6, 6)
    feature_dim: int = 5
    projection_hidden: int = 5
    projection_dim: int = 4
    tau: float = 0.5
    alpha: float = 1.5
    tau_ce: float = 0.5
    lam: float = 1.0
    eps: float = 1e-5
    tolerance: float = 1e-4
    sample_fraction: float = 1.0
    # Multiplies analytic gradients; anything but 1.0 simulates a broken backward rule
    gradient_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.n_sources < 2 or self.num_classes < 2:
            raise ConfigurationError('gradcheck needs at least two sources and two classes')
        if self.views < 2:
            raise ConfigurationError('gradcheck needs views >= 2', views=self.views)
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigurationError('sample_fraction must be in (0, 1]', sample_fraction=self.sample_fraction)
        if not self.eps > 0 or not self.tolerance > 0:
            raise ConfigurationError('eps and tolerance must be positive')


@dataclass
class SeedConfig:
    data: int = 0
    plan: int = 0
    model: int = 0
    train: int = 0

    def __post_init__(self):
        if min(self.data, self.plan, self.model, self.train) < 0:
            raise ConfigurationError('seeds must be non-negative')


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    session_plan: SessionPlanConfig = field(default_factory=SessionPlanConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    output_dir: str = 'output'

    @property
    def finetune_views(self) -> int:
        return self.finetune.views if self.finetune.views is not None else self.pretrain.views

    @property
    def finetune_augmentation(self) -> List[Dict[str, Any]]:
        return self.finetune.augmentation if self.finetune.augmentation is not None else self.pretrain.augmentation


# =============================================================================
# PARSING
# =============================================================================

def _is_optional(annotation) -> Tuple[bool, Any]:
    if typing.get_origin(annotation) is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        return True, args[0]
    return False, annotation


def _convert(value: Any, annotation, path: str) -> Any:
    optional, inner = _is_optional(annotation)
    if value is None:
        if optional:
            return None
        raise ConfigValidationError(path, 'must not be null')

    if dataclasses.is_dataclass(inner):
        return _build(inner, value, path)

    origin = typing.get_origin(inner)
    if inner is bool:
        if not isinstance(value, bool):
            raise ConfigValidationError(path, 'expected a boolean')
        return value
    if inner is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(path, 'expected an integer')
        return value
    if inner is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(path, 'expected a number')
        return float(value)
    if inner is str:
        if not isinstance(value, str):
            raise ConfigValidationError(path, 'expected a string')
        return value
    if origin in (tuple, list):
        if not isinstance(value, list):
            raise ConfigValidationError(path, 'expected a list')
        item_type = typing.get_args(inner)[0] if typing.get_args(inner) else Any
        items = [value[i] if item_type is Any or typing.get_origin(item_type) is dict
                 else _convert(value[i], item_type, f'{path}[{i}]') for i in range(len(value))]
        if typing.get_origin(item_type) is dict and not all(isinstance(v, dict) for v in items):
            raise ConfigValidationError(path, 'expected a list of objects')
        return tuple(items) if origin is tuple else items
    return value


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigValidationError(path or '<root>', 'expected an object')
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigValidationError(f'{path}.{key}' if path else key, 'unknown key')
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for name, value in data.items():
        kwargs[name] = _convert(value, hints[name], f'{path}.{name}' if path else name)
    try:
        return cls(**kwargs)
    except ConfigValidationError:
        raise
    except ConfigurationError as e:
        raise ConfigValidationError(path or '<root>', str(e))


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a decoded JSON document into a RunConfig."""
    return _build(RunConfig, data, '')


def load_run_config(path: Optional[Union[str, Path]] = None, output_dir: Optional[str] = None) -> RunConfig:
    """
    Load and validate a run configuration.

    Precedence for output_dir: explicit argument, then the BSC_OUTPUT_DIR
    environment variable, then the file, then the default.

    Args:
        path: JSON file (None uses defaults)
        output_dir: Override from the command line

    Returns:
        Validated RunConfig

    Raises:
        FileNotFoundError: If path does not exist
        ConfigValidationError: If the document is invalid
    """
    data: Dict[str, Any] = {}
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise FileNotFoundError(str(source))
        try:
            data = json.loads(source.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigValidationError('<root>', f'invalid JSON at line {e.lineno}: {e.msg}')

    config = parse_run_config(data)
    env_dir = os.environ.get(OUTPUT_DIR_ENV_VAR)
    if output_dir:
        config.output_dir = output_dir
    elif env_dir:
        config.output_dir = env_dir
    logger.debug(f'Resolved output directory: {config.output_dir}')
    return config


def resolved_config_dict(config: RunConfig) -> Dict[str, Any]:
    """Complete configuration, defaults included, as JSON-ready data."""
    def _plain(value):
        if isinstance(value, tuple):
            return [_plain(v) for v in value]
        if isinstance(value, list):
            return [_plain(v) for v in value]
        if isinstance(value, dict):
            return {k: _plain(v) for k, v in value.items()}
        return value
    return _plain(dataclasses.asdict(config))
