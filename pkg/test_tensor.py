"""
Tests for the autograd core, the parameter store and the gradient checker.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from fscil_base import (
    ConfigurationError,
    ConflictError,
    DegenerateBatchError,
    DegenerateVectorError,
    DimensionError,
    NumericError,
)
from fscil_tensor import (
    ParamStore,
    Tensor,
    add_bias,
    cosine_sim,
    gradcheck,
    gradcheck_detailed,
    l2_normalize,
    l2_normalize_rows,
    log_softmax_rows,
    masked_log_softmax,
    matmul,
    relu,
    scale,
    take_rows,
    weighted_sum,
    xavier_uniform_init,
)


def _store(**arrays):
    return ParamStore({name: Tensor(value) for name, value in arrays.items()})


def test_matmul_backward_matches_closed_form():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    b = Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)
    weighted_sum(matmul(a, b), np.ones((2, 1))).backward()
    assert_allclose(a.grad, np.array([[0.5, -1.0], [0.5, -1.0]]))
    assert_allclose(b.grad, np.array([[4.0], [6.0]]))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    y = matmul(x, x)
    weighted_sum(y + y, np.ones((1, 1))).backward()
    # d(2x^2)/dx = 4x
    assert_allclose(x.grad, [[8.0]])


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([[-1.0, 0.0, 2.0]]), requires_grad=True)
    weighted_sum(relu(x), np.ones((1, 3))).backward()
    assert_allclose(x.grad, [[0.0, 0.0, 1.0]])


def test_take_rows_accumulates_repeated_indices():
    x = Tensor(np.eye(3), requires_grad=True)
    weighted_sum(take_rows(x, [0, 0, 2]), np.ones((3, 3))).backward()
    assert_allclose(x.grad[:, 0], [2.0, 0.0, 1.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        scale(x, 2.0).backward()


def test_shape_mismatch_raises_dimension_error():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_non_finite_values_raise_numeric_error():
    with pytest.raises(NumericError):
        scale(Tensor(np.array([1e308])), 1e10)


def test_l2_normalize_vector():
    unit = l2_normalize(Tensor(np.array([3.0, 4.0])))
    assert_allclose(unit.value, [0.6, 0.8])
    with pytest.raises(DegenerateVectorError):
        l2_normalize(Tensor(np.zeros(3)))


def test_l2_normalize_rows_floor_avoids_error():
    x = Tensor(np.array([[0.0, 0.0], [0.0, 2.0]]))
    with pytest.raises(DegenerateVectorError):
        l2_normalize_rows(x)
    out = l2_normalize_rows(x, floor=1e-12)
    assert_allclose(out.value, [[0.0, 0.0], [0.0, 1.0]])


def test_log_softmax_rows_masks_and_rejects_empty_rows():
    values = np.array([[1.0, 2.0, 3.0]])
    mask = np.array([[True, False, True]])
    out = log_softmax_rows(values, mask)
    assert out[0, 1] == 0.0
    assert_allclose(np.exp(out[0, [0, 2]]).sum(), 1.0)
    with pytest.raises(DegenerateBatchError):
        log_softmax_rows(values, np.zeros((1, 3), dtype=bool))


def test_cosine_sim_is_clamped():
    assert cosine_sim([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert cosine_sim([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)
    with pytest.raises(DegenerateVectorError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


def test_xavier_bounds_and_determinism():
    a = xavier_uniform_init((30, 20), seed=[3, 0, 1]).value
    b = xavier_uniform_init((30, 20), seed=[3, 0, 1]).value
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= np.sqrt(6.0 / 50.0)
    with pytest.raises(DimensionError):
        xavier_uniform_init((5,), seed=0)


def test_param_store_rejects_duplicates_and_views_share_tensors():
    store = _store(**{'extractor.0.weight': np.ones((2, 2)), 'head.0.weight': np.ones((2, 2))})
    with pytest.raises(ConflictError):
        store.add('extractor.0.weight', Tensor(np.zeros(1)))
    view = store.select(['extractor.'])
    assert view.names() == ['extractor.0.weight']
    assert view['extractor.0.weight'] is store['extractor.0.weight']
    assert store.num_parameters() == 8


def test_fingerprint_tracks_bitwise_changes():
    store = _store(w=np.array([1.0, 2.0]))
    before = store.fingerprint()
    assert store.fingerprint() == before
    store['w'].value[0] = np.nextafter(1.0, 2.0)
    assert store.fingerprint() != before


def _tiny_network_loss(store):
    x = Tensor(np.array([[0.3, -0.2, 0.5], [1.0, 0.4, -0.7]]))

    def lossfn():
        hidden = relu(add_bias(matmul(x, store['w0']), store['b0']))
        logits = matmul(hidden, store['w1'])
        return weighted_sum(masked_log_softmax(logits), np.array([[-0.5, 0.0], [0.0, -0.5]]))
    return lossfn


def test_gradcheck_passes_on_composed_network():
    store = _store(w0=xavier_uniform_init((3, 4), 0).value, b0=np.full(4, 0.1),
                   w1=xavier_uniform_init((4, 2), 1).value)
    result = gradcheck_detailed(_tiny_network_loss(store), store)
    assert result.max_relative_error <= 1e-4
    assert result.coordinates_checked == store.num_parameters()


def test_gradcheck_flags_scaled_gradients():
    store = _store(w0=xavier_uniform_init((3, 4), 0).value, b0=np.full(4, 0.1),
                   w1=xavier_uniform_init((4, 2), 1).value)
    error = gradcheck(_tiny_network_loss(store), store, gradient_scale=2.0)
    assert error == pytest.approx(0.5, abs=1e-3)


def test_gradcheck_flags_tiny_scaled_gradient():
    store = _store(w=np.ones(1))
    lossfn = lambda: weighted_sum(store['w'], np.array([6e-9]))
    assert gradcheck(lossfn, store) == pytest.approx(0.0, abs=1e-6)
    # The difference alone (6e-9) is below GRADCHECK_ABS_FLOOR
    assert gradcheck(lossfn, store, gradient_scale=2.0) == pytest.approx(0.5, abs=1e-6)


def test_gradcheck_validates_arguments():
    store = _store(w=np.ones(2))
    with pytest.raises(ConfigurationError):
        gradcheck(lambda: weighted_sum(store['w'], np.ones(2)), store, sample_fraction=0.0)
    with pytest.raises(ConfigurationError):
        gradcheck(lambda: Tensor(0.0), ParamStore())


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=2, max_value=5), st.integers(0, 10_000))
def test_masked_log_softmax_gradient_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    store = _store(x=rng.standard_normal((rows, cols)))
    weights = rng.standard_normal((rows, cols))
    error = gradcheck(lambda: weighted_sum(masked_log_softmax(store['x']), weights), store)
    assert error <= 1e-4
