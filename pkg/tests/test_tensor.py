import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vesselgan import tensor as T
from vesselgan.errors import DomainError, GraphError, ShapeError


def leaf(values, dtype=np.float64):
    return T.Tensor(np.asarray(values, dtype=dtype), requires_grad=True)


def test_default_dtype_is_float32_and_precision_switches():
    assert T.Tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert T.Tensor([1.0]).dtype == np.float64
    assert T.get_default_dtype() == np.float32


def test_mean_of_four():
    x = leaf([1.0, 2.0, 3.0, 4.0])
    m = T.mean(x)
    assert m.item() == 2.5
    T.backward(m)
    np.testing.assert_array_equal(x.grad, [0.25] * 4)


def test_sigmoid_derivative_at_zero():
    w = leaf(0.0)
    loss = T.sigmoid(w)
    assert loss.item() == 0.5
    T.backward(loss)
    assert float(w.grad) == 0.25


def test_activation_values():
    assert T.activation(T.Tensor([0.0]), "sigmoid").data[0] == 0.5
    assert T.activation(T.Tensor([-2.0]), "leaky_relu", 0.2).data[0] == pytest.approx(-0.4)
    assert T.relu(T.Tensor([-1.0, 3.0])).data.tolist() == [0.0, 3.0]


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_leaky_relu_rejects_alpha_outside_open_unit_interval(alpha):
    with pytest.raises(ValueError):
        T.leaky_relu(T.Tensor([1.0]), alpha)


def test_tanh_against_scalar_math():
    grid = np.linspace(-6, 6, 2001)
    with T.precision(np.float64):
        out = T.tanh(T.Tensor(grid)).data
    ref = np.array([math.tanh(v) for v in grid])
    assert np.max(np.abs(out - ref)) <= 1e-6
    out32 = T.tanh(T.Tensor(grid.astype(np.float32))).data
    assert np.max(np.abs(out32 - ref)) <= 1e-6


def test_sigmoid_strictly_inside_unit_interval_in_float64():
    s = T.sigmoid(T.Tensor(np.array([-30.0, -10.0, 0.0, 10.0, 30.0]))).data
    assert np.all(s > 0) and np.all(s < 1)
    big = T.sigmoid(T.Tensor(np.array([-1e4, 1e4]))).data
    assert np.all(np.isfinite(big))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-100, 100)), arrays(np.float64, (3, 4), elements=st.floats(-100, 100)))
def test_abs_sub_matches_scalar_loop(a, b):
    out = T.abs_(T.sub(T.Tensor(a), T.Tensor(b))).data
    ref = np.array([[abs(a[i, j] - b[i, j]) for j in range(4)] for i in range(3)])
    np.testing.assert_array_equal(out, ref)


def test_concat_channels_shape_and_gradient_split():
    a = leaf(np.ones((1, 2, 8, 8)))
    b = leaf(np.ones((1, 3, 8, 8)))
    c = T.concat_channels(a, b)
    assert c.shape == (1, 5, 8, 8)
    T.backward(T.mean(c))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ShapeError):
        T.concat_channels(T.Tensor(np.ones((1, 2, 8, 8))), T.Tensor(np.ones((1, 2, 4, 8))))


def test_binary_ops_allow_only_scalar_broadcast():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        T.add(T.Tensor([1.0, 2.0]), T.Tensor([1.0, 2.0, 3.0]))
    assert T.mul(T.Tensor([1.0, 2.0]), 3.0).data.tolist() == [3.0, 6.0]


def test_log_domain_error_names_first_bad_index():
    with pytest.raises(DomainError, match=r"\(1, 0\)"):
        T.log(T.Tensor([[1.0, 2.0], [0.0, -1.0]]))


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(GraphError):
        T.backward(T.mul(x, 2.0))


def test_double_backward_is_rejected():
    x = leaf([1.0, 2.0])
    loss = T.mean(T.mul(x, x))
    T.backward(loss)
    with pytest.raises(GraphError):
        T.backward(loss)


def test_unreached_leaves_get_zero_grad():
    x, y = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    both = T.concat_channels(T.Tensor(np.ones((1, 1, 1, 1))), T.Tensor(np.ones((1, 1, 1, 1))))
    loss = T.add(T.mean(x), T.mul(T.mean(both), 0.0))
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, [0.5, 0.5])
    assert y.grad is None or not np.any(y.grad)


def test_tape_is_topological_and_visits_each_node_once():
    x = leaf([1.0, 2.0])
    h = T.mul(x, 2.0)
    loss = T.mean(T.add(h, h))
    tape = T.Tape(loss)
    position = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(position) == len(tape.nodes)
    for node in tape.nodes:
        for parent in node._parents:
            if id(parent) in position:
                assert position[id(parent)] < position[id(node)]
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 3, 5, 5)).astype(np.float32)
    r1 = T.tanh(T.sigmoid(T.Tensor(a))).data
    r2 = T.tanh(T.sigmoid(T.Tensor(a))).data
    assert r1.tobytes() == r2.tobytes()
