"""
Incremental Phase - Update-free learning of one few-shot session.

New classifiers are mean-feature initialized from the session's K-shot split
and appended to the bank. No existing parameter or classifier may change.
"""

import logging
from typing import Optional, Sequence

from fscil_base import (
    ConfigurationError,
    DisjointnessError,
    FreezeViolationError,
    PhaseResult,
    TrainingPhase,
)
from fscil_data import LabeledSample
from fscil_logging import log_phase
from fscil_model import Network, init_classifiers_from_means


class IncrementalPhase(TrainingPhase):
    """Processor for incremental session t > 1."""

    def __init__(
        self,
        session: int,
        samples: Sequence[LabeledSample],
        classes: Sequence[int],
        logger: logging.Logger,
    ):
        super().__init__(logger)
        if session < 2:
            raise ConfigurationError('incremental sessions start at t=2', session=session)
        self.session = session
        self.samples = list(samples)
        self.classes = list(classes)
        self._params_before: Optional[str] = None
        self._bank_before: Optional[str] = None
        self._prior_classes: Sequence[int] = ()

    @property
    def phase_name(self) -> str:
        return f'session-{self.session}'

    @log_phase('freeze snapshot')
    def prepare(self, network: Network, result: PhaseResult) -> None:
        overlap = sorted(c for c in self.classes if c in network.classifiers)
        if overlap:
            raise DisjointnessError('session classes already learned', session=self.session, classes=overlap)
        self._prior_classes = network.classifiers.class_ids
        self._params_before = network.params.fingerprint()
        self._bank_before = network.classifiers.fingerprint(self._prior_classes)

    def run(self, network: Network, result: PhaseResult) -> PhaseResult:
        init_classifiers_from_means(network, self.samples, self.classes, self.session)

        if network.params.fingerprint() != self._params_before:
            raise FreezeViolationError('network parameters changed', session=self.session)
        if network.classifiers.fingerprint(self._prior_classes) != self._bank_before:
            raise FreezeViolationError('earlier classifiers changed', session=self.session)
        added = len(network.classifiers) - len(self._prior_classes)
        if added != len(self.classes):
            raise FreezeViolationError('unexpected bank growth', expected=len(self.classes), added=added)

        self.logger.info(f'Added {added} classifiers; bank holds {len(network.classifiers)} classes')
        return result
