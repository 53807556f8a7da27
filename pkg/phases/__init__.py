"""
FSCIL Training Phases Package.

This package contains one processor per phase of the learning algorithm
(pre-training, fine-tuning, incremental sessions), each following the common
TrainingPhase base class pattern.
"""

from .finetune_phase import FinetunePhase
from .incremental_phase import IncrementalPhase
from .pretrain_phase import PretrainPhase

__all__ = ['PretrainPhase', 'FinetunePhase', 'IncrementalPhase']
