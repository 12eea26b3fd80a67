import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_diff, conv1d_loops, lstm_loops, rel_err
from tempcast import layers as L
from tempcast.errors import ConsistencyError, DimensionError, ParameterError
from tempcast.tensor import Rng


def rand_lstm(rng, units, in_dim, scale=0.5):
    return L.LSTMParams(
        rng.uniform(-scale, scale, (4 * units, in_dim)),
        rng.uniform(-scale, scale, (4 * units, units)),
        rng.uniform(-scale, scale, 4 * units),
    )


def zero_lstm(units, in_dim):
    return L.LSTMParams(np.zeros((4 * units, in_dim)), np.zeros((4 * units, units)), np.zeros(4 * units))


# --------------------------------------------------------------------------- conv


def test_conv_hand_sum():
    p = L.Conv1DParams(np.ones((1, 2, 1)), np.zeros(1))
    assert L.conv1d_forward(np.array([[1.0], [2.0], [3.0]]), p).ravel().tolist() == [3.0, 5.0]


def test_conv_relu_clamps_negative_bias():
    p = L.Conv1DParams(np.zeros((3, 2, 1)), -np.ones(3))
    assert np.all(L.conv1d_forward(np.ones((5, 1)), p) == 0.0)


def test_conv_matches_nested_loops(rng):
    p = L.Conv1DParams(rng.normal(0, 1, (4, 2, 1)), rng.normal(0, 0.1, 4))
    x = rng.normal(0, 1, (30, 1))
    np.testing.assert_allclose(L.conv1d_forward(x, p), conv1d_loops(x, p.kernels, p.bias), rtol=0, atol=1e-12)


def test_conv_batched_equals_per_sample(rng):
    p = L.Conv1DParams(rng.normal(0, 1, (3, 2, 2)), rng.normal(0, 0.1, 3))
    x = rng.normal(0, 1, (4, 7, 2))
    batched = L.conv1d_forward(x, p)
    for i in range(4):
        np.testing.assert_array_equal(batched[i], L.conv1d_forward(x[i], p))


def test_conv_shape_errors():
    p = L.Conv1DParams(np.ones((1, 3, 1)), np.zeros(1))
    with pytest.raises(DimensionError):
        L.conv1d_forward(np.ones((2, 1)), p)
    with pytest.raises(DimensionError):
        L.conv1d_backward(np.ones((5, 1)), p, np.ones((2, 1)))


def test_conv_backward_zero_upstream(rng):
    p = L.Conv1DParams(rng.normal(0, 1, (3, 2, 1)), rng.normal(0, 1, 3))
    x = rng.normal(0, 1, (6, 1))
    g = L.conv1d_backward(x, p, np.zeros((5, 3)))
    assert not g.params.kernels.any() and not g.params.bias.any() and not g.input.any()


def test_conv_gradients_match_finite_differences(rng):
    p = L.Conv1DParams(rng.normal(0, 1, (4, 2, 3)), rng.normal(0, 0.5, 4))
    x = rng.normal(0, 1, (8, 3))
    w = rng.normal(0, 1, (7, 4))

    def loss():
        return float(np.sum(L.conv1d_forward(x, p) * w))

    z = L._conv_preact(x, p)
    assert np.abs(z).min() > 1e-3  # away from ReLU kinks
    g = L.conv1d_backward(x, p, w)
    assert rel_err(g.input, central_diff(loss, x)) < 1e-6
    assert rel_err(g.params.kernels, central_diff(loss, p.kernels)) < 1e-6
    # bias gradient is the column sum of the ReLU-masked upstream
    np.testing.assert_allclose(g.params.bias, np.where(z > 0, w, 0).sum(axis=0), rtol=1e-15)


def test_conv_param_count():
    assert L.Conv1DParams(np.zeros((256, 2, 1)), np.zeros(256)).count == L.conv1d_param_count(256, 2, 1) == 768


# ------------------------------------------------------------------ reshape layers


def test_repeat_vector_and_backward():
    assert L.repeat_vector(np.array([1.0, 2.0]), 3).tolist() == [[1, 2], [1, 2], [1, 2]]
    assert L.repeat_vector_backward(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])).tolist() == [2.0, 2.0]
    with pytest.raises(ParameterError):
        L.repeat_vector(np.ones(2), 0)


def test_flatten_round_trip(rng):
    x = rng.normal(0, 1, (2, 5, 3))
    assert np.array_equal(L.unflatten(L.flatten(x), 5, 3), x)
    assert L.flatten(np.arange(6.0).reshape(2, 3)).tolist() == [0, 1, 2, 3, 4, 5]


# --------------------------------------------------------------------------- LSTM


def test_lstm_zero_params_gives_zero_states():
    h = L.lstm_forward(np.ones((5, 2)), zero_lstm(3, 2))
    assert np.all(h == 0.0)


def test_lstm_saturation_limit():
    p = zero_lstm(1, 1)
    p.b[0] = p.b[2] = p.b[3] = 50.0  # input, cell and output gates saturated
    h = L.lstm_forward(np.zeros((1, 1)), p, return_sequences=False)
    assert h[0] == pytest.approx(math.tanh(1.0), abs=1e-12)
    assert h[0] == pytest.approx(0.76159, abs=1e-5)


def test_lstm_matches_scalar_loop(rng):
    p = rand_lstm(rng, 4, 3)
    x = rng.normal(0, 1, (5, 3))
    np.testing.assert_allclose(L.lstm_forward(x, p), lstm_loops(x, p.W, p.U, p.b), rtol=0, atol=1e-12)


def test_lstm_last_equals_last_row_bit_exact(rng):
    p = rand_lstm(rng, 4, 3)
    x = rng.normal(0, 1, (2, 6, 3))
    assert np.array_equal(L.lstm_forward(x, p, False), L.lstm_forward(x, p, True)[:, -1])


def test_lstm_gate_views(rng):
    p = rand_lstm(rng, 2, 3)
    W_f, U_f, b_f = p.gate("forget")
    assert np.array_equal(W_f, p.W[2:4]) and np.array_equal(b_f, p.b[2:4]) and U_f.shape == (2, 2)


def test_lstm_empty_sequence():
    with pytest.raises(DimensionError):
        L.lstm_forward(np.zeros((0, 2)), zero_lstm(2, 2))


def test_lstm_backward_zero_upstream(rng):
    p = rand_lstm(rng, 3, 2)
    x = rng.normal(0, 1, (4, 2))
    _, cache = L.lstm_forward_cached(x, p)
    g = L.lstm_backward(x, p, cache, np.zeros((4, 3)))
    assert all(not a.any() for a in g.params.tensors().values()) and not g.input.any()


@pytest.mark.parametrize("return_sequences", [True, False])
def test_lstm_bptt_matches_finite_differences(rng, return_sequences):
    p = rand_lstm(rng, 3, 2)
    x = rng.normal(0, 1, (2, 4, 2))
    shape = (2, 4, 3) if return_sequences else (2, 3)
    w = rng.normal(0, 1, shape)

    def loss():
        return float(np.sum(L.lstm_forward(x, p, return_sequences) * w))

    _, cache = L.lstm_forward_cached(x, p, return_sequences)
    g = L.lstm_backward(x, p, cache, w)
    for name, arr in p.tensors().items():
        assert rel_err(g.params.tensors()[name], central_diff(loss, arr)) < 1e-6, name
    assert rel_err(g.input, central_diff(loss, x)) < 1e-6


def test_lstm_long_range_dependence(rng):
    p = rand_lstm(rng, 3, 2)
    x = rng.normal(0, 1, (6, 2))
    _, cache = L.lstm_forward_cached(x, p, False)
    g = L.lstm_backward(x, p, cache, np.ones(3))
    numeric = central_diff(lambda: float(L.lstm_forward(x, p, False).sum()), x)
    assert np.abs(numeric[0]).max() > 1e-6
    np.testing.assert_allclose(g.input[0], numeric[0], rtol=1e-6, atol=1e-10)


def test_lstm_cache_mismatch(rng):
    p = rand_lstm(rng, 3, 2)
    x = rng.normal(0, 1, (4, 2))
    _, cache = L.lstm_forward_cached(x, p)
    with pytest.raises(ConsistencyError):
        L.lstm_backward(rng.normal(0, 1, (5, 2)), p, cache, np.zeros((5, 3)))
    with pytest.raises(ConsistencyError):
        L.lstm_backward(x, rand_lstm(rng, 4, 2), cache, np.zeros((4, 4)))


def test_repeated_lstm_equals_generic_on_repeated_input(rng):
    p = rand_lstm(rng, 3, 5)
    v = rng.normal(0, 1, (2, 5))
    w = rng.normal(0, 1, (2, 7, 3))
    x = L.repeat_vector(v, 7)
    h_gen, c_gen = L.lstm_forward_cached(x, p)
    h_rep, c_rep = L.lstm_forward_repeated_cached(v, p, 7)
    np.testing.assert_allclose(h_rep, h_gen, rtol=0, atol=1e-14)
    g_gen = L.lstm_backward(x, p, c_gen, w)
    g_rep = L.lstm_backward_repeated(v, p, c_rep, w)
    np.testing.assert_allclose(g_rep.input, L.repeat_vector_backward(g_gen.input), rtol=1e-12, atol=1e-14)
    for name in ("W", "U", "b"):
        np.testing.assert_allclose(g_rep.params.tensors()[name], g_gen.params.tensors()[name], rtol=1e-12, atol=1e-14)
    with pytest.raises(ConsistencyError):
        L.lstm_backward(x, p, c_rep, w)


def test_param_count_formula():
    assert zero_lstm(100, 100).count == L.lstm_param_count(100, 100) == 80400


# ------------------------------------------------------------------ bidirectional


def test_bilstm_palindrome_symmetry(rng):
    p = rand_lstm(rng, 3, 2)
    half = rng.normal(0, 1, (3, 2))
    x = np.concatenate([half, half[::-1]])
    out = L.bilstm_forward(x, L.BiLSTMParams(p, p))
    assert out.shape == (6,)
    assert np.array_equal(out[:3], out[3:])


def test_bilstm_zero_params():
    z = zero_lstm(2, 3)
    assert not L.bilstm_forward(np.ones((4, 3)), L.BiLSTMParams(z, z)).any()


def test_bilstm_compositional(rng):
    pf, pb = rand_lstm(rng, 3, 2), rand_lstm(rng, 3, 2)
    x = rng.normal(0, 1, (5, 2))
    expected = np.concatenate([L.lstm_forward(x, pf, False), L.lstm_forward(x[::-1], pb, False)])
    assert np.array_equal(L.bilstm_forward(x, L.BiLSTMParams(pf, pb)), expected)


def test_bilstm_gradients(rng):
    p = L.BiLSTMParams(rand_lstm(rng, 2, 3), rand_lstm(rng, 2, 3))
    x = rng.normal(0, 1, (2, 4, 3))
    w = rng.normal(0, 1, (2, 4))

    def loss():
        return float(np.sum(L.bilstm_forward(x, p) * w))

    _, cache = L.bilstm_forward_cached(x, p)
    g = L.bilstm_backward(x, p, cache, w)
    grads = g.params.tensors()
    for name, arr in p.tensors().items():
        assert rel_err(grads[name], central_diff(loss, arr)) < 1e-6, name
    assert rel_err(g.input, central_diff(loss, x)) < 1e-6
    assert p.count == 2 * L.lstm_param_count(2, 3)


# ------------------------------------------------------------------------ dropout


def test_dropout_identity_cases(rng):
    x = rng.normal(0, 1, (4, 5))
    assert np.array_equal(L.dropout(x, 0.2, "eval", rng)[0], x)
    assert np.array_equal(L.dropout(x, 0.0, "train", rng)[0], x)
    with pytest.raises(ParameterError):
        L.dropout(x, 1.0, "train", rng)


def test_dropout_unbiased():
    n, rate = 100_000, 0.2
    out, mask = L.dropout(np.ones(n), rate, "train", Rng(99))
    # each element is 0 or 1/(1-rate): mean 1, variance rate/(1-rate)
    sigma = math.sqrt(rate / (1 - rate) / n)
    assert abs(out.mean() - 1.0) < 3 * sigma
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.8}
    assert np.array_equal(L.dropout_backward(np.ones(n), mask), out)


def test_dropout_deterministic_given_seed():
    x = np.ones(50)
    assert np.array_equal(L.dropout(x, 0.5, "train", Rng(3))[0], L.dropout(x, 0.5, "train", Rng(3))[0])


# -------------------------------------------------------------------------- dense


def test_dense_examples():
    eye = L.DenseParams(np.eye(3), np.zeros(3))
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(L.dense_forward(x, eye, "linear"), x)
    p = L.DenseParams(np.array([[2.0, 3.0]]), np.array([-10.0]))
    assert L.dense_forward(np.ones(2), p, "relu").tolist() == [0.0]
    with pytest.raises(DimensionError):
        L.dense_forward(np.ones(3), p)


@pytest.mark.parametrize("activation", ["linear", "relu"])
def test_dense_gradients(rng, activation):
    p = L.DenseParams(rng.normal(0, 1, (4, 3)), rng.normal(0, 1, 4))
    x = rng.normal(0, 1, (5, 3))
    w = rng.normal(0, 1, (5, 4))

    def loss():
        return float(np.sum(L.dense_forward(x, p, activation) * w))

    g = L.dense_backward(x, p, activation, w)
    assert rel_err(g.params.weights, central_diff(loss, p.weights)) < 1e-6
    assert rel_err(g.params.bias, central_diff(loss, p.bias)) < 1e-6
    assert rel_err(g.input, central_diff(loss, x)) < 1e-6


@given(st.integers(1, 50), st.integers(1, 50))
def test_dense_param_count(o, i):
    assert L.DenseParams(np.zeros((o, i)), np.zeros(o)).count == o * (i + 1)
