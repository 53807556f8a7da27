"""
FSCIL Optimizer - SGD with momentum, coupled weight decay and learning-rate
schedules.

Update rule per parameter:
    buffer <- momentum * buffer + grad + weight_decay * param
    param  <- param - lr(step) * buffer
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

from fscil_base import ConfigurationError, IncompleteGradientError
from fscil_constants import MIN_LEARNING_RATE, SCHEDULES
from fscil_tensor import ParamStore

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    """
    Hyperparameters of one optimizer.

    The step schedule decays by gamma at every milestone when milestones are
    given, else every decay_interval steps. The cosine schedule anneals over
    total_steps.
    """
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = 'step'
    gamma: float = 0.1
    decay_interval: Optional[int] = None
    milestones: Tuple[int, ...] = ()
    total_steps: Optional[int] = None

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError('learning rate must be positive', learning_rate=self.learning_rate)
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError('momentum must be in [0, 1)', momentum=self.momentum)
        if self.weight_decay < 0:
            raise ConfigurationError('weight decay must be non-negative', weight_decay=self.weight_decay)
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f'schedule must be one of {SCHEDULES}', schedule=self.schedule)
        if self.schedule == 'step':
            if not 0 < self.gamma <= 1:
                raise ConfigurationError('gamma must be in (0, 1]', gamma=self.gamma)
            if self.decay_interval is not None and self.decay_interval <= 0:
                raise ConfigurationError('decay interval must be positive', decay_interval=self.decay_interval)
            if list(self.milestones) != sorted(self.milestones) or any(m <= 0 for m in self.milestones):
                raise ConfigurationError('milestones must be positive and increasing', milestones=self.milestones)
        if self.total_steps is not None and self.total_steps <= 0:
            raise ConfigurationError('total steps must be positive', total_steps=self.total_steps)

    def with_total_steps(self, total_steps: int) -> 'OptimizerConfig':
        """Return a copy whose cosine horizon is total_steps."""
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            schedule=self.schedule,
            gamma=self.gamma,
            decay_interval=self.decay_interval,
            milestones=self.milestones,
            total_steps=max(1, int(total_steps)),
        )


def learning_rate(config: OptimizerConfig, step: int) -> float:
    """
    Learning rate at a zero-based step index.

    Args:
        config: Optimizer configuration
        step: Number of updates already applied

    Returns:
        Strictly positive learning rate
    """
    if step < 0:
        raise ConfigurationError('step index must be non-negative', step=step)

    if config.schedule == 'constant':
        return config.learning_rate

    if config.schedule == 'step':
        if config.milestones:
            decays = sum(1 for m in config.milestones if step >= m)
        elif config.decay_interval:
            decays = step // config.decay_interval
        else:
            decays = 0
        # Floored so long runs with many decays never reach zero
        return max(config.learning_rate * config.gamma ** decays, min(config.learning_rate, MIN_LEARNING_RATE))

    if config.total_steps is None:
        raise ConfigurationError('cosine schedule needs total_steps')
    # Clamped so the final step keeps a positive rate
    s = min(step, config.total_steps - 1)
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * s / config.total_steps))


def sgd_step(store: ParamStore, config: OptimizerConfig, step: int) -> ParamStore:
    """
    Apply one in-place SGD update to every parameter of the store.

    Args:
        store: Parameters with populated gradients
        config: Optimizer configuration
        step: Zero-based step index for the schedule

    Returns:
        The same store, updated

    Raises:
        IncompleteGradientError: If any parameter has no gradient
    """
    missing = [name for name, grad in store.gradients.items() if grad is None]
    if missing:
        raise IncompleteGradientError('gradients missing for parameters', names=missing)

    lr = learning_rate(config, step)
    for name, tensor in store.params.items():
        buffer = store.momentum[name]
        buffer *= config.momentum
        buffer += tensor.grad
        if config.weight_decay:
            buffer += config.weight_decay * tensor.value
        tensor.value -= lr * buffer
    return store


class SGD:
    """Keeps the step counter for a store and forwards to sgd_step."""

    def __init__(self, store: ParamStore, config: OptimizerConfig):
        self.store = store
        self.config = config
        self.steps_taken = 0

    @property
    def current_lr(self) -> float:
        return learning_rate(self.config, self.steps_taken)

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self) -> float:
        """Apply one update and return the learning rate it used."""
        lr = self.current_lr
        sgd_step(self.store, self.config, self.steps_taken)
        self.steps_taken += 1
        return lr
