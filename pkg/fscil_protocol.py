"""
FSCIL Protocol - The three-phase learning algorithm and per-session evaluation.

run_full executes pre-training, fine-tuning with base classifier init, then
sessions 2..T with update-free mean-feature classifiers, evaluating after
every session (session 1 included, after fine-tuning).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from fscil_base import CapacityError, FreezeViolationError, PhaseResult
from fscil_config import FinetuneConfig, PretrainConfig, RunConfig, resolved_config_dict
from fscil_constants import OUTPUT_FILES
from fscil_data import (
    Dataset,
    LabeledSample,
    SessionPlan,
    generate_gaussian_clusters,
    load_dataset,
    make_session_plan,
)
from fscil_logging import create_phase_logger, log_run_boundary
from fscil_metrics import AccuracyMatrix, SessionAccuracy
from fscil_model import Network, NetworkConfig, save_checkpoint
from fscil_utils import dumps_json
from phases import FinetunePhase, IncrementalPhase, PretrainPhase
from run_status import RunStatusManager

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class RunRecord:
    """
    Outcome of a full run.

    Only config, sessions and checkpoints are serialized; wall-clock data
    stays in phase_results and goes to a separate timings file.
    """
    config: Dict[str, Any]
    sessions: List[SessionAccuracy] = field(default_factory=list)
    checkpoints: Dict[str, str] = field(default_factory=dict)
    phase_results: List[PhaseResult] = field(default_factory=list)
    fingerprints: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, Any] = field(default_factory=dict)
    network: Optional[Network] = None

    @property
    def matrix(self) -> AccuracyMatrix:
        return AccuracyMatrix(self.sessions)

    @property
    def loss_history(self) -> Dict[str, List[float]]:
        return {r.phase: list(r.loss_history) for r in self.phase_results if r.loss_history}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config,
            'sessions': [s.to_dict() for s in self.sessions],
            'checkpoints': dict(self.checkpoints),
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())


# =============================================================================
# DATA WIRING
# =============================================================================

def build_plan(config: RunConfig) -> SessionPlan:
    """Create the dataset described by config.data and split it into sessions."""
    data = config.data
    test_dataset: Optional[Dataset] = None
    if data.source == 'synthetic':
        dataset = generate_gaussian_clusters(
            data.num_classes, data.d_in, data.samples_per_class, data.cluster_std, config.seeds.data
        )
    else:
        dataset = load_dataset(data.path, data.source, data.labels_path)
        if data.test_path:
            next_id = max(s.source_id for s in dataset.samples) + 1
            test_dataset = load_dataset(data.test_path, data.source, data.test_labels_path,
                                        d_in=dataset.d_in, id_offset=next_id)
    sp = config.session_plan
    return make_session_plan(
        dataset, sp.num_base_classes, sp.ways, sp.shots, sp.num_sessions, config.seeds.plan,
        test_dataset=test_dataset, test_fraction=data.test_fraction,
    )


def build_network(config: RunConfig, d_in: int) -> Network:
    m = config.model
    return Network(NetworkConfig(
        d_in=d_in,
        hidden_dims=m.hidden_dims,
        feature_dim=m.feature_dim,
        projection_hidden=m.projection_hidden,
        projection_dim=m.projection_dim,
        bias_init=m.bias_init,
        tau_ce=m.tau_ce,
        scoring=m.scoring,
        seed=config.seeds.model,
    ))


# =============================================================================
# PHASES
# =============================================================================

def pretrain(
    network: Network,
    samples: List[LabeledSample],
    config: PretrainConfig,
    seed: int = 0,
    base_classes: Optional[List[int]] = None,
    grid_shape: Optional[Tuple[int, int]] = None,
    checkpoint_callback=None,
    progress_callback=None,
) -> Tuple[Network, PhaseResult]:
    """Pre-train the extractor (and head) on the base training split."""
    classes = base_classes if base_classes is not None else sorted({s.label for s in samples})
    phase = PretrainPhase(config, samples, classes, seed, create_phase_logger('pretrain', seed=seed),
                          grid_shape=grid_shape, checkpoint_callback=checkpoint_callback)
    phase.set_progress_callback(progress_callback)
    return network, phase.execute(network)


def finetune(
    network: Network,
    samples: List[LabeledSample],
    config: FinetuneConfig,
    views: int,
    augmentation: List[Dict[str, Any]],
    seed: int = 0,
    base_classes: Optional[List[int]] = None,
    grid_shape: Optional[Tuple[int, int]] = None,
    progress_callback=None,
) -> Tuple[Network, PhaseResult]:
    """Install base classifiers and, when enabled, fine-tune with CE + cs-kd."""
    classes = base_classes if base_classes is not None else sorted({s.label for s in samples})
    phase = FinetunePhase(config, samples, classes, views, augmentation, seed,
                          create_phase_logger('finetune', seed=seed), grid_shape=grid_shape)
    phase.set_progress_callback(progress_callback)
    return network, phase.execute(network)


def run_incremental_session(network: Network, plan: SessionPlan, t: int) -> Tuple[Network, PhaseResult]:
    """Append mean-feature classifiers for the classes of session t."""
    phase = IncrementalPhase(t, plan.train_split(t), plan.session_classes(t),
                             create_phase_logger('incremental', session=t))
    return network, phase.execute(network)


def evaluate_session(network: Network, plan: SessionPlan, t: int) -> SessionAccuracy:
    """
    Accuracy over C^{1:t}, C^1 and C^{2:t}, always predicting among C^{1:t}.

    Raises:
        CapacityError: If a non-empty class scope has no test samples
    """
    active = plan.active_classes(t)
    test = plan.test_split(active)
    if not test:
        raise CapacityError('no test samples for the active classes', t=t)

    predictions = network.predict(test, active)
    labels = np.array([s.label for s in test], dtype=np.int64)
    correct = predictions == labels
    base_mask = np.isin(labels, plan.base_classes)

    acc_base = float(np.mean(correct[base_mask])) if base_mask.any() else None
    if acc_base is None:
        raise CapacityError('no test samples for the base classes', t=t)
    acc_new = None
    if t > 1:
        if (~base_mask).sum() == 0:
            raise CapacityError('no test samples for the incremental classes', t=t)
        acc_new = float(np.mean(correct[~base_mask]))

    return SessionAccuracy(t=t, acc_all=float(np.mean(correct)), acc_base=acc_base,
                           acc_new=acc_new, active_classes=len(active))


# =============================================================================
# FULL RUN
# =============================================================================

class _CheckpointWriter:
    """Saves checkpoints under output_dir and records their relative paths."""

    def __init__(self, output_dir: Optional[Path], enabled: bool, every: int):
        self.root = output_dir
        self.enabled = enabled and output_dir is not None
        self.every = every
        self.paths: Dict[str, str] = {}

    def save(self, network: Network, name: str, **extra) -> None:
        if not self.enabled:
            return
        relative = Path(OUTPUT_FILES['checkpoint_dir']) / f'{name}.npz'
        save_checkpoint(network, self.root / relative, extra={'name': name, **extra})
        self.paths[name] = relative.as_posix()

    def pretrain_epoch(self, network: Network, epoch: int) -> None:
        if self.every and epoch % self.every == 0:
            self.save(network, f'pretrain-epoch-{epoch:04d}', phase='pretrain', epoch=epoch)


def _track(status: RunStatusManager, name: str, session: Optional[int], action):
    status.phase_started(name, session)
    try:
        result = action()
    except Exception:
        status.phase_completed(name, 'FAILED')
        raise
    phase_result = result[1]
    status.phase_completed(name, phase_result.status.value)
    return result


@log_run_boundary
def run_full(
    config: RunConfig,
    plan: SessionPlan,
    output_dir: Optional[PathLike] = None,
    status: Optional[RunStatusManager] = None,
) -> RunRecord:
    """
    Execute the whole protocol on a session plan.

    Args:
        config: Run configuration
        plan: Session plan
        output_dir: Directory for checkpoints (None disables them)
        status: Optional progress tracker

    Returns:
        RunRecord with one evaluation per session
    """
    status = status or RunStatusManager()
    status.run_started()
    root = Path(output_dir) if output_dir is not None else None
    checkpoints = _CheckpointWriter(root, config.evaluation.save_checkpoints, config.evaluation.checkpoint_every)
    record = RunRecord(config=resolved_config_dict(config))
    seed = config.seeds.train

    network = build_network(config, plan.d_in)
    base_train = plan.train_split(1)
    base_classes = list(plan.base_classes)

    _, result = _track(status, 'pretrain', 1, lambda: pretrain(
        network, base_train, config.pretrain, seed, base_classes, plan.grid_shape,
        checkpoint_callback=checkpoints.pretrain_epoch, progress_callback=status.phase_progress,
    ))
    record.phase_results.append(result)
    checkpoints.save(network, 'pretrain', phase='pretrain')

    _, result = _track(status, 'finetune', 1, lambda: finetune(
        network, base_train, config.finetune, config.finetune_views, config.finetune_augmentation,
        seed, base_classes, plan.grid_shape, progress_callback=status.phase_progress,
    ))
    record.phase_results.append(result)
    checkpoints.save(network, 'finetune', phase='finetune')

    frozen = network.params.fingerprint()
    record.fingerprints['finetune'] = frozen
    record.sessions.append(evaluate_session(network, plan, 1))
    _log_session(record.sessions[-1])

    for t in range(2, plan.num_sessions + 1):
        _, result = _track(status, f'session-{t}', t, lambda t=t: run_incremental_session(network, plan, t))
        record.phase_results.append(result)
        if network.params.fingerprint() != frozen:
            raise FreezeViolationError('extractor changed after fine-tuning', session=t)
        record.sessions.append(evaluate_session(network, plan, t))
        _log_session(record.sessions[-1])

    record.fingerprints['final'] = network.params.fingerprint()
    if plan.num_sessions > 1:
        checkpoints.save(network, 'final', phase='incremental', session=plan.num_sessions)
    record.checkpoints = dict(checkpoints.paths)
    record.timings = status.get_timings()
    record.network = network
    return record


def _log_session(entry: SessionAccuracy) -> None:
    new = f'{100 * entry.acc_new:.2f}' if entry.acc_new is not None else '-'
    logger.info(
        f'Session {entry.t}: all {100 * entry.acc_all:.2f}, base {100 * entry.acc_base:.2f}, '
        f'new {new} ({entry.active_classes} classes)'
    )


def final_network(record: RunRecord, output_dir: PathLike) -> Optional[Path]:
    """Path of the last checkpoint written by a run, if any."""
    for name in ('final', 'finetune', 'pretrain'):
        if name in record.checkpoints:
            return Path(output_dir) / record.checkpoints[name]
    return None
