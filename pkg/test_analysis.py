"""
Tests for the angular diagnostics and embedding export.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fscil_analysis import (
    angle_report,
    class_mean_features,
    expected_min_angle,
    export_embeddings,
    load_embeddings,
    min_angle_study,
    psi,
    psi_trace,
)
from fscil_base import CapacityError, ConfigurationError, DegenerateVectorError
from fscil_config import parse_run_config
from fscil_data import generate_gaussian_clusters
from fscil_model import Network, NetworkConfig, save_checkpoint
from fscil_protocol import build_network


def test_psi_of_orthogonal_means_is_ninety():
    assert psi([np.array([1.0, 0.0]), np.array([0.0, 3.0])]) == pytest.approx(90.0)


def test_psi_of_symmetric_configurations():
    angles = np.radians([90.0, 210.0, 330.0])
    means = {i: np.array([np.cos(a), np.sin(a)]) for i, a in enumerate(angles)}
    # pairwise angles are all 120 degrees
    assert psi(means) == pytest.approx(120.0)
    equilateral = [np.array([1.0, 0.0]), np.array([0.5, np.sqrt(3) / 2]), np.array([1.0, 0.0])]
    assert psi(equilateral) == pytest.approx((60.0 + 0.0 + 60.0) / 3)


def test_psi_needs_two_nondegenerate_means():
    with pytest.raises(ConfigurationError):
        psi([np.ones(3)])
    with pytest.raises(DegenerateVectorError):
        psi([np.ones(3), np.zeros(3)])


def test_min_angle_study_is_deterministic_and_chunk_invariant():
    a = min_angle_study(300, 16, seed=2)
    b = min_angle_study(300, 16, seed=2, memory_cap_mb=0.01)
    assert a == pytest.approx(b, abs=1e-9)
    assert 0.0 < a < 90.0
    assert min_angle_study(300, 16, seed=3) != a


def test_min_angle_grows_with_dimension():
    assert min_angle_study(500, 64, seed=0) > min_angle_study(500, 8, seed=0)


def test_min_angle_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        min_angle_study(1, 8, seed=0)
    with pytest.raises(ConfigurationError):
        min_angle_study(10, 8, seed=0, memory_cap_mb=0)


def test_expected_min_angle_tracks_the_study():
    estimate = expected_min_angle(2000, 128)
    assert abs(estimate - min_angle_study(2000, 128, seed=0)) < 3.0


def test_psi_near_zero_at_initialization():
    config = parse_run_config({})
    data = generate_gaussian_clusters(10, config.data.d_in, 50, 0.05, seed=0)
    network = build_network(config, config.data.d_in)
    assert network.config == NetworkConfig(d_in=config.data.d_in)
    report = angle_report(network, data.samples, list(range(10)))
    assert report.n_classes == 10
    assert report.psi_degrees <= 5.0


def test_psi_trace_reads_checkpoints(tmp_path):
    data = generate_gaussian_clusters(3, 4, 5, 0.1, seed=0)
    network = Network(NetworkConfig(d_in=4, hidden_dims=(6,), feature_dim=5, projection_hidden=4,
                                    projection_dim=3, seed=0))
    paths = [save_checkpoint(network, tmp_path / f'epoch-{e}.npz', extra={'epoch': e}) for e in (0, 1)]
    trace = psi_trace(paths, data.samples, [0, 1, 2])
    assert [entry['epoch'] for entry in trace] == [0, 1]
    assert trace[0]['psi_degrees'] == pytest.approx(trace[1]['psi_degrees'])


def test_embedding_export_round_trip(tmp_path):
    data = generate_gaussian_clusters(2, 4, 3, 0.1, seed=0)
    network = Network(NetworkConfig(d_in=4, hidden_dims=(6,), feature_dim=5, projection_hidden=4,
                                    projection_dim=3, seed=0))
    path = export_embeddings(network, data.samples, tmp_path / 'emb.csv')
    ids, labels, features = load_embeddings(path)
    assert list(ids) == [s.source_id for s in data.samples]
    assert list(labels) == [s.label for s in data.samples]
    assert_allclose(features, network.embed(data.samples), rtol=0, atol=0)


@pytest.mark.slow
def test_min_angle_high_dimension():
    value = min_angle_study(10_000, 512, seed=0)
    assert value <= 81.0
    assert value == pytest.approx(expected_min_angle(10_000, 512), abs=1.5)


def test_class_mean_features_average_embeddings():
    data = generate_gaussian_clusters(3, 4, 5, cluster_std=0.2, seed=2)
    network = Network(NetworkConfig(d_in=4, hidden_dims=(6,), feature_dim=5, projection_hidden=5, projection_dim=3, seed=0))
    means = class_mean_features(network, data.samples, [0, 2])
    assert sorted(means) == [0, 2]
    members = [s for s in data.samples if s.label == 2]
    assert_allclose(means[2], network.embed(members).mean(axis=0), rtol=0, atol=1e-15)
    with pytest.raises(CapacityError):
        class_mean_features(network, data.samples, [7])


def test_psi_ignores_a_shared_rotation():
    rng = np.random.default_rng(11)
    means = rng.standard_normal((6, 8))
    rotation, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    assert psi(list(means @ rotation.T)) == pytest.approx(psi(list(means)), abs=1e-9)


@pytest.mark.parametrize('seed', [0, 1, 5])
def test_min_angle_of_two_vectors_is_their_angle(seed):
    vectors = np.random.default_rng(seed).standard_normal((2, 2))
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    expected = np.degrees(np.arccos(np.clip(unit[0] @ unit[1], -1.0, 1.0)))
    assert min_angle_study(2, 2, seed=seed) == pytest.approx(expected, abs=1e-9)


def test_min_angle_shrinks_with_more_vectors():
    averages = [np.mean([min_angle_study(n, 16, seed=s) for s in range(5)]) for n in (20, 200, 2000)]
    assert averages[0] > averages[1] > averages[2]
