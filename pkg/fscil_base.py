"""
FSCIL Base Classes - Error hierarchy, enums, result structures and the
abstract phase processor.

This module defines the core abstractions shared by the numeric core, the
training phases and the command-line front end.
"""

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, List, Optional


# =============================================================================
# ERRORS - One hierarchy so the CLI can map failures to exit codes
# =============================================================================

class FscilError(Exception):
    """Base class for every domain error raised by the engine."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ', '.join(f'{key}={value}' for key, value in self.context.items())
        return f'{self.message} ({details})'


class DimensionError(FscilError):
    """Tensor shapes do not line up."""


class DegenerateVectorError(FscilError):
    """A vector with (near) zero norm was normalized."""


class NumericError(FscilError):
    """A computation produced NaN or Inf."""


class IncompleteGradientError(FscilError):
    """An optimizer step was requested before every gradient was populated."""


class ConfigurationError(FscilError):
    """An argument or setting is outside its valid range."""


class ConfigValidationError(ConfigurationError):
    """A run configuration file failed validation at a given field path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f'{field_path}: {message}')
        self.field_path = field_path


class DatasetParseError(FscilError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f'line {line_number}: {message}')
        self.line_number = line_number


class SchemaError(FscilError):
    """A file parsed but its structure is inconsistent."""


class CapacityError(FscilError):
    """Not enough classes or samples for the request."""


class AugmentationShapeError(FscilError):
    """A grid-only augmentation was applied to flat data."""


class BoundsError(FscilError):
    """An index is outside its container."""


class DegenerateBatchError(FscilError):
    """A contrastive term has no competitors."""


class LabelError(FscilError):
    """A class id is not among the scored classes."""


class ConflictError(FscilError):
    """A name or class id is already present."""


class DisjointnessError(FscilError):
    """Session class sets overlap."""


class UndefinedMetricError(FscilError):
    """A metric is not defined for the given accuracy matrix."""


class TrainingDivergedError(FscilError):
    """A training loss became non-finite."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message, epoch=epoch, batch=batch)
        self.epoch = epoch
        self.batch = batch


class FreezeViolationError(FscilError):
    """A frozen parameter changed during an incremental session."""


class CheckpointError(FscilError):
    """A checkpoint could not be read or written."""


# =============================================================================
# ENUMS
# =============================================================================

class PhaseStatus(Enum):
    """Status states for a training phase."""
    PENDING = "PENDING"
    IN_PROGRESS = "IN_PROGRESS"
    COMPLETED = "COMPLETED"
    SKIPPED = "SKIPPED"
    FAILED = "FAILED"

    def to_json(self):
        """Convert enum to string for JSON serialization."""
        return self.value


class ClassifierOrigin(Enum):
    """How a classifier vector came to be."""
    MEAN_INIT = "mean-init"
    OPTIMIZED_FROM_MEAN = "optimized-from-mean"
    RANDOM_INIT = "random-init"


# =============================================================================
# DATA STRUCTURES
# =============================================================================

@dataclass
class PhaseResult:
    """
    Result object for one phase of the learning algorithm.

    Holds status, wall-clock timing, the steps completed and the per-epoch
    loss history.
    """
    phase: str
    status: PhaseStatus
    init_time: str
    end_time: Optional[str] = None
    duration_seconds: Optional[float] = None
    error: Optional[str] = None
    completed_steps: List[str] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)


class PhaseResultEncoder(json.JSONEncoder):
    """JSON encoder for phase results and enums."""

    def default(self, obj):
        if isinstance(obj, (PhaseStatus, ClassifierOrigin)):
            return obj.value
        if isinstance(obj, PhaseResult):
            return {
                'phase': obj.phase,
                'status': obj.status.value,
                'init_time': obj.init_time,
                'end_time': obj.end_time,
                'duration_seconds': obj.duration_seconds,
                'error': obj.error,
                'completed_steps': obj.completed_steps,
                'epochs': len(obj.loss_history),
            }
        return super().default(obj)


# =============================================================================
# PHASE PROCESSORS - Abstract base class for the learning phases
# =============================================================================

class TrainingPhase(ABC):
    """
    Abstract base class for the phases of the learning algorithm.

    Each phase (pre-training, fine-tuning, incremental session) extends this
    class and implements its own preparation and main loop while inheriting
    the common bookkeeping in execute().
    """

    def __init__(self, logger: logging.Logger):
        """
        Initialize the phase.

        Args:
            logger: Logger instance for this phase
        """
        self.logger = logger
        self.progress_callback: Optional[Callable] = None

    def set_progress_callback(self, callback: Optional[Callable]) -> None:
        """
        Set a callback receiving (phase_name, epoch, loss) after every epoch.

        Args:
            callback: Function to call with progress updates
        """
        self.progress_callback = callback

    def notify_epoch(self, epoch: int, loss: float) -> None:
        """Forward an epoch summary to the progress callback."""
        if self.progress_callback:
            self.progress_callback(self.phase_name, epoch, loss)

    @property
    @abstractmethod
    def phase_name(self) -> str:
        """Return the phase identifier (e.g. 'pretrain')."""

    @abstractmethod
    def prepare(self, network: Any, result: PhaseResult) -> None:
        """
        Set up parameters, classifiers and optimizer state for the phase.

        Args:
            network: Network being trained
            result: Current phase result
        """

    @abstractmethod
    def run(self, network: Any, result: PhaseResult) -> PhaseResult:
        """
        Run the main loop of the phase.

        Args:
            network: Network being trained
            result: Current phase result

        Returns:
            Updated phase result
        """

    def execute(self, network: Any) -> PhaseResult:
        """
        Execute the complete phase workflow.

        Domain errors are recorded on the result, logged and re-raised so
        callers can map them to exit codes.

        Args:
            network: Network being trained

        Returns:
            PhaseResult: Final result of the phase
        """
        self.logger.info('=' * 60)
        self.logger.info(f'Starting phase: {self.phase_name}')

        init_time = datetime.now()
        result = PhaseResult(phase=self.phase_name, status=PhaseStatus.PENDING, init_time=str(init_time))

        try:
            self.prepare(network, result)
            result.completed_steps.append('prepare')
            if result.status == PhaseStatus.PENDING:
                result.status = PhaseStatus.IN_PROGRESS
                result = self.run(network, result)
                result.completed_steps.append('run')
            if result.status == PhaseStatus.IN_PROGRESS:
                result.status = PhaseStatus.COMPLETED

        except FscilError as e:
            self.logger.error(f'Phase {self.phase_name} failed: {e}')
            result.status = PhaseStatus.FAILED
            result.error = str(e)
            raise

        finally:
            end_time = datetime.now()
            result.end_time = str(end_time)
            result.duration_seconds = (end_time - init_time).total_seconds()
            self.logger.info(
                f'Final result - Phase: {self.phase_name}, Status: {result.status.value}, '
                f'Epochs: {len(result.loss_history)}, Error: {result.error if result.error else "None"}'
            )

        return result
