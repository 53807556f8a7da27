"""
Tests for multi-view batch layout and the per-anchor P / Q / R sets.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fscil_base import BoundsError, ConfigurationError
from fscil_batching import (
    anchor_sets,
    build_multiview_batch,
    build_plain_batch,
    iterate_batches,
    set_masks,
)
from fscil_data import AugmentationConfig, GaussianNoise, LabeledSample

NO_AUG = AugmentationConfig()


def _samples(labels):
    return [LabeledSample(np.full(3, float(i)), label, 100 + i) for i, label in enumerate(labels)]


def test_block_layout():
    batch = build_multiview_batch(_samples([0, 1, 0]), 3, NO_AUG, draw_seed=0)
    assert len(batch) == 9
    assert list(batch.view_index) == [1, 1, 1, 2, 2, 2, 3, 3, 3]
    assert list(batch.source_ids) == [100, 101, 102] * 3
    features, label, source, view = batch.item(4)
    assert (label, source, view) == (1, 101, 2)


def test_anchor_sets_worked_example():
    # n=3, m=3, labels [0, 1, 0]; anchor 0 is view 1 of source 0
    batch = build_multiview_batch(_samples([0, 1, 0]), 3, NO_AUG, draw_seed=0)
    sets = anchor_sets(batch, 0)
    assert sets.positives_aug == (3, 6)
    assert sets.positives_diffsrc == (2, 5, 8)
    assert sets.negatives == (1, 4, 7)
    assert sets.others == tuple(range(1, 9))


def test_anchor_index_bounds():
    batch = build_multiview_batch(_samples([0, 1]), 2, NO_AUG, draw_seed=0)
    with pytest.raises(BoundsError):
        anchor_sets(batch, 4)
    with pytest.raises(BoundsError):
        batch.item(-1)


def test_views_use_distinct_draws():
    config = AugmentationConfig([GaussianNoise(0.5)], rng_seed=0)
    batch = build_multiview_batch(_samples([0]), 2, config, draw_seed=0)
    assert not np.array_equal(batch.features[0], batch.features[1])
    again = build_multiview_batch(_samples([0]), 2, config, draw_seed=0)
    assert np.array_equal(batch.features, again.features)
    later = build_multiview_batch(_samples([0]), 2, config, draw_seed=1)
    assert not np.array_equal(batch.features, later.features)


def test_single_view_rejected_for_multiview():
    with pytest.raises(ConfigurationError):
        build_multiview_batch(_samples([0, 1]), 1, NO_AUG, draw_seed=0)
    plain = build_plain_batch(_samples([0, 1]), NO_AUG, draw_seed=0)
    assert plain.m == 1 and len(plain) == 2


def test_iterate_batches_covers_every_sample_once():
    samples = _samples(list(range(10)))
    chunks = list(iterate_batches(samples, 4, np.random.default_rng(0)))
    assert [len(c) for c in chunks] == [4, 4, 2]
    assert sorted(s.source_id for c in chunks for s in c) == [s.source_id for s in samples]
    assert [len(c) for c in iterate_batches(samples, 4, np.random.default_rng(0), min_size=3)] == [4, 4]


@settings(max_examples=500, deadline=None)
@given(
    labels=st.lists(st.integers(min_value=0, max_value=3), min_size=1, max_size=6),
    m=st.integers(min_value=2, max_value=4),
)
def test_set_structure_properties(labels, m):
    batch = build_multiview_batch(_samples(labels), m, NO_AUG, draw_seed=0)
    p_mask, q_mask, r_mask = set_masks(batch)
    size = len(batch)
    for j in range(size):
        sets = anchor_sets(batch, j)
        members = sets.positives_aug + sets.positives_diffsrc + sets.negatives
        assert len(members) == len(set(members)) == size - 1
        assert j not in members
        assert len(sets.positives_aug) == m - 1
        assert np.array_equal(np.flatnonzero(p_mask[j]), sets.positives_aug)
        assert np.array_equal(np.flatnonzero(q_mask[j]), sets.positives_diffsrc)
        assert np.array_equal(np.flatnonzero(r_mask[j]), sets.negatives)
    assert np.array_equal(q_mask, q_mask.T)
    assert np.array_equal(p_mask, p_mask.T)
