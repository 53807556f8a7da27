"""
Directional ablation checks on the synthetic benchmark.

Each claim compares two variants over ten seeds and must hold for at least
eight of them. These runs take minutes and are marked slow; run them with
pytest -m slow.
"""

import pytest

from fscil_analysis import angle_report
from fscil_config import parse_run_config
from fscil_metrics import bma, nla
from fscil_protocol import build_network, build_plan, pretrain, run_full

SEEDS = range(10)
REQUIRED_WINS = 8

BENCHMARK = {
    'data': {'num_classes': 60, 'd_in': 32, 'samples_per_class': 60, 'cluster_std': 0.35},
    'session_plan': {'num_base_classes': 20, 'ways': 5, 'shots': 5, 'num_sessions': 9},
    'model': {'hidden_dims': [64], 'feature_dim': 48, 'projection_hidden': 48, 'projection_dim': 24},
    'pretrain': {'epochs': 15, 'batch_size': 64, 'views': 3, 'alpha': 1.2},
    'finetune': {'epochs': 3, 'batch_size': 64},
    'evaluation': {'save_checkpoints': False},
    'analysis': {'angle_report': False},
}

pytestmark = [pytest.mark.slow, pytest.mark.timeout(7200)]


def _variant(seed, **sections):
    data = {name: dict(values) for name, values in BENCHMARK.items()}
    for name, values in sections.items():
        data[name].update(values)
    data['seeds'] = {'data': 0, 'plan': 0, 'model': seed, 'train': seed}
    return parse_run_config(data)


def _metrics(config):
    record = run_full(config, build_plan(config))
    return nla(record.matrix), bma(record.matrix)


def _wins(metric_index, better, worse):
    wins = 0
    for seed in SEEDS:
        if _metrics(_variant(seed, **better))[metric_index] > _metrics(_variant(seed, **worse))[metric_index]:
            wins += 1
    return wins


def test_bsc_pretraining_beats_ce_on_new_classes():
    assert _wins(0, {'pretrain': {'loss': 'bsc'}}, {'pretrain': {'loss': 'ce'}}) >= REQUIRED_WINS


def test_bsc_pretraining_keeps_base_classes_better_than_simclr():
    assert _wins(1, {'pretrain': {'loss': 'bsc'}}, {'pretrain': {'loss': 'simclr'}}) >= REQUIRED_WINS


def test_mean_base_classifiers_beat_random_ones_on_base_classes():
    assert _wins(1, {'finetune': {'base_init': 'mean'}}, {'finetune': {'base_init': 'random'}}) >= REQUIRED_WINS


def test_finetuning_improves_new_class_accuracy():
    assert _wins(0, {'finetune': {'enabled': True}}, {'finetune': {'enabled': False}}) >= REQUIRED_WINS


def test_larger_alpha_raises_mean_nla():
    low = [_metrics(_variant(seed, pretrain={'alpha': 1.0}))[0] for seed in SEEDS]
    high = [_metrics(_variant(seed, pretrain={'alpha': 4.0}))[0] for seed in SEEDS]
    assert sum(high) / len(high) > sum(low) / len(low)


def test_pretraining_spreads_class_means():
    config = _variant(0)
    plan = build_plan(config)
    network = build_network(config, plan.d_in)
    base = list(plan.base_classes)
    before = angle_report(network, plan.train_split(1), base).psi_degrees
    pretrain(network, plan.train_split(1), config.pretrain, seed=0, base_classes=base)
    after = angle_report(network, plan.train_split(1), base).psi_degrees
    assert after > before
