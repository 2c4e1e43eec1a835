import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cinemagraph import tensor as T
from cinemagraph.tensor import ShapeError, TapeError, Tensor
from gradcheck import DIFFERENTIABLE_OPS, check_gradients, worst_error
from oracles import conv2d_loops, lstm_unit_by_unit, matmul_loops


@pytest.mark.parametrize("name", sorted(DIFFERENTIABLE_OPS))
def test_gradients_match_central_differences(name):
    assert worst_error(name, trials=5) < 1e-4


# -- conv2d -----------------------------------------------------------------


def test_conv2d_unit_kernel_is_identity(rng):
    x = rng.standard_normal((1, 1, 4, 4))
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_halves_spatial_size():
    x = Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32))
    out = T.conv2d(x, Tensor(np.zeros((64, 3, 5, 5), dtype=np.float32)), Tensor(np.zeros(64, dtype=np.float32)), 2, 2)
    assert out.shape == (1, 64, 32, 32)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 2), (2, 0), (3, 1)])
def test_conv2d_matches_nested_loops(rng, stride, padding):
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, stride, padding), rtol=0, atol=1e-10)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="channel"):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


def test_conv2d_rejects_kernel_larger_than_input():
    with pytest.raises(ShapeError, match="height"):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 8))), Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros(1)))


def test_conv2d_rejects_bad_stride():
    with pytest.raises(ShapeError, match="stride"):
        T.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros(1)), stride=0)


# -- conv2d_transpose -------------------------------------------------------


def test_deconv_unit_kernel_is_identity(rng):
    x = rng.standard_normal((2, 1, 5, 5))
    out = T.conv2d_transpose(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), 1, 0, (5, 5))
    np.testing.assert_array_equal(out.data, x)


def test_deconv_doubles_spatial_size():
    x = Tensor(np.zeros((1, 512, 4, 4), dtype=np.float32))
    w = Tensor(np.zeros((512, 256, 5, 5), dtype=np.float32))
    out = T.conv2d_transpose(x, w, Tensor(np.zeros(256, dtype=np.float32)), 2, 2, (1, 256, 8, 8))
    assert out.shape == (1, 256, 8, 8)


def test_deconv_rejects_inconsistent_output_shape():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeError, match="height"):
        T.conv2d_transpose(x, Tensor(np.zeros((2, 1, 5, 5))), Tensor(np.zeros(1)), 2, 2, (11, 8))


@pytest.mark.parametrize("seed", range(10))
def test_conv_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    n, c, o = (int(v) for v in rng.integers(1, 4, size=3))
    k = int(rng.choice([1, 3, 5]))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, 3))
    h = int(rng.integers(max(k - 2 * p, 1), 9))
    x = rng.standard_normal((n, c, h, h))
    w = rng.standard_normal((o, c, k, k))
    ax = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(o)), s, p).data
    y = rng.standard_normal(ax.shape)
    aty = T.conv2d_transpose(Tensor(y), Tensor(w), Tensor(np.zeros(c)), s, p, (h, h)).data
    assert abs(np.vdot(ax, y) - np.vdot(x, aty)) < 1e-10 * max(1.0, abs(np.vdot(ax, y)))


def test_deconv_forward_equals_conv_input_gradient(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
    w = rng.standard_normal((4, 3, 5, 5))
    out = T.conv2d(x, Tensor(w), Tensor(np.zeros(4)), 2, 2)
    g = rng.standard_normal(out.shape)
    T.backward(T.tensor_sum(out * Tensor(g)))
    via_transpose = T.conv2d_transpose(Tensor(g), Tensor(w), Tensor(np.zeros(3)), 2, 2, (8, 8)).data
    np.testing.assert_allclose(x.grad, via_transpose, atol=1e-12)


# -- dense, activations -----------------------------------------------------


def test_fully_connected_identity_and_zero_weights(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(T.fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    b = rng.standard_normal(2)
    out = T.fully_connected(Tensor(x), Tensor(np.zeros((4, 2))), Tensor(b)).data
    np.testing.assert_array_equal(out, np.broadcast_to(b, (3, 2)))


def test_fully_connected_matches_loop_matmul(rng):
    x, w, b = rng.standard_normal((3, 5)), rng.standard_normal((5, 4)), rng.standard_normal(4)
    out = T.fully_connected(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(out, matmul_loops(x, w) + b, atol=1e-10)


def test_fully_connected_shape_mismatch():
    with pytest.raises(ShapeError):
        T.fully_connected(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


def test_activation_values():
    assert T.relu(Tensor([-1.0])).data[0] == 0.0
    assert T.tanh(Tensor([0.0])).data[0] == 0.0
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    T.backward(T.tensor_sum(T.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_sigmoid_gradient_tight(rng):
    assert check_gradients(T.sigmoid, [rng.standard_normal(7) * 3], rng) < 1e-6


@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
def test_activations_stay_finite_and_bounded(x):
    s = T.sigmoid(Tensor(x)).data
    t = T.tanh(Tensor(x)).data
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
    assert np.all(np.abs(t) <= 1)


def test_log_refuses_non_positive():
    with pytest.raises(ValueError):
        T.log(Tensor([0.0]))


# -- lstm -------------------------------------------------------------------


def test_lstm_zero_params_give_zero_hidden(rng):
    params = {"w_x": Tensor(np.zeros((3, 8))), "w_h": Tensor(np.zeros((2, 8))), "b": Tensor(np.zeros(8))}
    h, c = T.lstm_step(Tensor(rng.standard_normal((1, 3))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), params)
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_lstm_matches_hand_stepped_cell():
    x = np.array([0.5, -1.0])
    h = np.array([0.1, -0.2])
    c = np.array([0.3, 0.7])
    w_x = np.arange(16, dtype=np.float64).reshape(2, 8) / 20 - 0.4
    w_h = np.cos(np.arange(16, dtype=np.float64)).reshape(2, 8) / 3
    b = np.linspace(-0.5, 0.5, 8)
    params = {"w_x": Tensor(w_x), "w_h": Tensor(w_h), "b": Tensor(b)}
    nh, nc = T.lstm_step(Tensor(x[None]), Tensor(h[None]), Tensor(c[None]), params)
    eh, ec = lstm_unit_by_unit(x, h, c, w_x, w_h, b)
    np.testing.assert_allclose(nh.data[0], eh, atol=1e-10)
    np.testing.assert_allclose(nc.data[0], ec, atol=1e-10)


def test_lstm_three_step_gradient_wrt_first_input(rng):
    w = {k: rng.standard_normal(s) * 0.7 for k, s in (("w_x", (3, 8)), ("w_h", (2, 8)), ("b", (8,)))}
    later = [rng.standard_normal((1, 3)) for _ in range(2)]

    def run(x0):
        p = {k: Tensor(v) for k, v in w.items()}
        h = c = Tensor(np.zeros((1, 2)))
        for x in [x0, Tensor(later[0]), Tensor(later[1])]:
            h, c = T.lstm_step(x, h, c, p)
        return h

    assert check_gradients(run, [rng.standard_normal((1, 3))], rng, eps=1e-5) < 1e-4


def test_lstm_width_mismatch():
    params = {"w_x": Tensor(np.zeros((3, 8))), "w_h": Tensor(np.zeros((2, 8))), "b": Tensor(np.zeros(8))}
    with pytest.raises(ShapeError, match="input width"):
        T.lstm_step(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), params)


# -- argmax one-hot ---------------------------------------------------------


def test_argmax_onehot_examples():
    np.testing.assert_array_equal(T.argmax_onehot(Tensor([[0.1, 0.9, 0.3]])).data, [[0, 1, 0]])
    np.testing.assert_array_equal(T.argmax_onehot(Tensor([[0.5, 0.5]])).data, [[1, 0]])


def test_argmax_onehot_passes_gradient_straight_through():
    q = Tensor(np.array([[0.1, 0.9, 0.3]]), requires_grad=True)
    up = np.array([[2.0, -3.0, 5.0]])
    T.backward(T.tensor_sum(T.argmax_onehot(q) * Tensor(up)))
    np.testing.assert_array_equal(q.grad, up)


def test_argmax_onehot_empty():
    with pytest.raises(ShapeError):
        T.argmax_onehot(Tensor(np.zeros((1, 0))))


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)), elements=st.floats(-1e6, 1e6)))
def test_argmax_onehot_rows_are_one_hot(q):
    out = T.argmax_onehot(Tensor(q)).data
    assert set(np.unique(out)) <= {0.0, 1.0}
    np.testing.assert_array_equal(out.sum(axis=1), 1.0)
    np.testing.assert_array_equal(np.argmax(out, axis=1), np.argmax(q, axis=1))


# -- tape -------------------------------------------------------------------


def test_sum_gives_ones_gradient(rng):
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    T.backward(T.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_mse_to_zero_gradient_is_two_x_over_n():
    x = Tensor(np.array([2.0, -1.0, 0.5]), requires_grad=True)
    T.backward(T.mean(T.square(x)))
    np.testing.assert_allclose(x.grad, 2 * x.data / 3)


def test_composite_conv_relu_mse_gradient(rng):
    target = rng.standard_normal((1, 2, 3, 3))

    def net(x, w, b):
        y = T.relu(T.conv2d(x, w, b, 2, 1))
        return T.mean(T.square(y - Tensor(target)))

    arrays = [rng.standard_normal((1, 2, 6, 6)), rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2) + 0.3]
    assert check_gradients(net, arrays, rng) < 1e-4


def test_backward_twice_is_an_error(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    loss = T.tensor_sum(T.square(x))
    T.backward(loss)
    with pytest.raises(TapeError, match="consumed"):
        T.backward(loss)


def test_backward_needs_scalar(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with pytest.raises(TapeError, match="scalar"):
        T.backward(T.square(x))


def test_backward_without_tape():
    with pytest.raises(TapeError):
        T.backward(T.tensor_sum(Tensor(np.ones(3))))


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with T.no_grad():
        y = T.square(x)
    assert not y.requires_grad


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    T.backward(T.tensor_sum(x * x + x))
    np.testing.assert_allclose(x.grad, [7.0])


def test_forward_is_bit_deterministic(rng):
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 5, 5)).astype(np.float32)
    a = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4, np.float32)), 2, 2).data
    b = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4, np.float32)), 2, 2).data
    assert a.tobytes() == b.tobytes()
