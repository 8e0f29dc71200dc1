import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from transitnet.errors import ArgumentError, DimensionError, StateError
from transitnet.layers import (
    VALID,
    Conv1D,
    Dense,
    Dropout,
    MaxPool1D,
    ReLU,
    Sigmoid,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_apply,
    maxpool_backward,
    maxpool_forward,
    relu,
    sigmoid,
)
from transitnet.numerics import make_rng

SEEDS = range(20)


# -- convolution -------------------------------------------------------------

def test_conv_zero_input_zero_output():
    conv = Conv1D(2, 3, 5, weight=make_rng(0).standard_normal((3, 2, 5)))
    np.testing.assert_array_equal(conv1d_forward(np.zeros((2, 9)), conv), np.zeros((3, 9)))


def test_conv_identity_kernel_same_padding():
    conv = Conv1D(1, 1, 3, weight=[[[0.0, 1.0, 0.0]]])
    out = conv1d_forward([[1, 2, 3, 4, 5]], conv)
    np.testing.assert_array_equal(out, [[1, 2, 3, 4, 5]])


def test_conv_is_cross_correlation():
    conv = Conv1D(1, 1, 3, padding=VALID, weight=[[[1.0, 0.0, -1.0]]])
    np.testing.assert_array_equal(conv1d_forward([[1, 2, 3]], conv), [[-2.0]])


def test_conv_same_keeps_length_valid_shrinks():
    x = make_rng(1).standard_normal((3, 17))
    assert conv1d_forward(x, Conv1D(3, 4, 5)).shape == (4, 17)
    assert conv1d_forward(x, Conv1D(3, 4, 5, padding=VALID)).shape == (4, 13)


def test_conv_errors():
    conv = Conv1D(2, 1, 5, padding=VALID)
    with pytest.raises(DimensionError):
        conv1d_forward(np.zeros((3, 10)), conv)
    with pytest.raises(DimensionError):
        conv1d_forward(np.zeros((2, 4)), conv)
    with pytest.raises(StateError):
        Conv1D(1, 1, 3).backward(np.zeros((1, 4, 1)))


def test_conv_backward_zero_grad():
    conv = Conv1D(2, 3, 5, weight=make_rng(0).standard_normal((3, 2, 5)))
    conv1d_forward(make_rng(1).standard_normal((2, 8)), conv)
    gx, gw, gb = conv1d_backward(np.zeros((3, 8)), conv)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_bias_gradient_sums_positions():
    conv = Conv1D(1, 1, 3)
    conv1d_forward([[0.5, -1.0, 2.0]], conv)
    _, _, gb = conv1d_backward([[1.0, 2.0, 3.0]], conv)
    np.testing.assert_array_equal(gb, [6.0])


@pytest.mark.parametrize("padding", ["same", "valid"])
@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients_match_finite_differences(seed, padding):
    rng = make_rng(seed)
    cin, cout = rng.integers(1, 5), rng.integers(1, 5)
    k = int(rng.choice([1, 3, 5]))
    length = int(rng.integers(k, 9))
    conv = Conv1D(cin, cout, k, padding=padding,
                  weight=rng.standard_normal((cout, cin, k)), bias=rng.standard_normal(cout))
    x = rng.standard_normal((2, length, cin))
    w_out = rng.standard_normal(conv.forward(x).shape)

    def f():
        return float(np.sum(conv.forward(x) * w_out))

    conv.forward(x)
    gx = conv.backward(w_out)
    gw, gb = conv.grad_weight.copy(), conv.grad_bias.copy()
    assert rel_error(gx, numeric_grad(f, x)) < 1e-5
    assert rel_error(gw, numeric_grad(f, conv.weight)) < 1e-5
    assert rel_error(gb, numeric_grad(f, conv.bias)) < 1e-5


# -- pooling -----------------------------------------------------------------

def test_maxpool_windows():
    np.testing.assert_array_equal(maxpool_forward([1, 3, 2, 5, 4], MaxPool1D(3, 2)), [[3, 5]])


def test_maxpool_constant():
    np.testing.assert_array_equal(maxpool_forward([7.0] * 4, MaxPool1D(2, 2)), [[7.0, 7.0]])


@pytest.mark.parametrize("length, window, expected", [(2001, 5, 999), (201, 7, 98), (251, 7, 123)])
def test_maxpool_length_formula(length, window, expected):
    pool = MaxPool1D(window, 2)
    assert pool.output_length(length) == expected
    assert pool.forward(np.zeros((1, length, 1))).shape == (1, expected, 1)


def test_maxpool_backward_routes_to_argmax():
    pool = MaxPool1D(3, 1)
    maxpool_forward([1, 3, 2], pool)
    np.testing.assert_array_equal(maxpool_backward([2.5], pool), [[0.0, 2.5, 0.0]])


def test_maxpool_backward_zero():
    pool = MaxPool1D(3, 2)
    maxpool_forward([1, 3, 2, 5, 4], pool)
    assert not maxpool_backward([0.0, 0.0], pool).any()


def test_maxpool_ties_lowest_index_and_overlap_accumulates():
    pool = MaxPool1D(3, 2)
    maxpool_forward([4, 4, 4, 1, 0], pool)
    # window 0 -> index 0 (tie), window 1 covers [4, 1, 0] -> index 2
    np.testing.assert_array_equal(maxpool_backward([1.0, 10.0], pool), [[1, 0, 10, 0, 0]])
    pool = MaxPool1D(3, 1)
    maxpool_forward([0, 5, 1, 0], pool)
    np.testing.assert_array_equal(maxpool_backward([1.0, 2.0], pool), [[0, 3, 0, 0]])


def test_maxpool_errors():
    with pytest.raises(ArgumentError):
        MaxPool1D(2, 3)
    with pytest.raises(DimensionError):
        maxpool_forward([1, 2], MaxPool1D(3, 2))
    pool = MaxPool1D(3, 2)
    with pytest.raises(StateError):
        maxpool_backward([1.0], pool)
    maxpool_forward([1, 3, 2, 5, 4], pool)
    with pytest.raises(StateError):
        maxpool_backward([1.0, 2.0, 3.0], pool)


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradients_match_finite_differences(seed):
    rng = make_rng(seed)
    window = int(rng.integers(1, 5))
    stride = int(rng.integers(1, window + 1))
    length = int(rng.integers(window, 9))
    channels = int(rng.integers(1, 5))
    # a shuffled grid with spacing 0.01 keeps every window tie-free beyond h
    x = rng.permutation(np.arange(2 * length * channels) * 0.01).reshape(2, length, channels)
    pool = MaxPool1D(window, stride)
    w_out = rng.standard_normal(pool.forward(x).shape)

    def f():
        return float(np.sum(pool.forward(x) * w_out))

    pool.forward(x)
    gx = pool.backward(w_out)
    assert rel_error(gx, numeric_grad(f, x)) < 1e-5


# -- dense -------------------------------------------------------------------

def test_dense_identity():
    x = make_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(dense_forward(x, Dense(4, 4, weight=np.eye(4))), x)


def test_dense_hand_value():
    layer = Dense(2, 1, weight=[[1.0], [1.0]], bias=[3.0])
    np.testing.assert_array_equal(dense_forward([[1.0, 2.0]], layer), [[6.0]])


def test_dense_size_mismatch():
    with pytest.raises(DimensionError):
        dense_forward(np.ones((1, 3)), Dense(2, 1))
    with pytest.raises(DimensionError):
        Dense(2, 2, weight=np.ones((3, 2)))


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients_match_finite_differences(seed):
    rng = make_rng(seed)
    layer = Dense(4, 3, weight=rng.standard_normal((4, 3)), bias=rng.standard_normal(3))
    x = rng.standard_normal((3, 4))
    w_out = rng.standard_normal((3, 3))

    def f():
        return float(np.sum(layer.forward(x) * w_out))

    layer.forward(x)
    gx, gw, gb = dense_backward(w_out, layer)
    assert rel_error(gx, numeric_grad(f, x)) < 1e-5
    assert rel_error(gw, numeric_grad(f, layer.weight)) < 1e-5
    assert rel_error(gb, numeric_grad(f, layer.bias)) < 1e-5


# -- activations -------------------------------------------------------------

def test_relu_values_and_kink():
    act = ReLU()
    np.testing.assert_array_equal(act.forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(act.backward(np.ones(3)), [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(relu(np.array([-1.0, 2.0])), [0.0, 2.0])


def test_sigmoid_center():
    act = Sigmoid()
    assert act.forward(np.array([0.0]))[0] == 0.5
    assert act.backward(np.array([1.0]))[0] == 0.25


def test_sigmoid_symmetry():
    x = make_rng(3).standard_normal(1000) * 10
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, rtol=0, atol=1e-15)
    assert np.all(np.isfinite(sigmoid(np.array([-1000.0, 1000.0]))))


def test_activation_backward_before_forward():
    with pytest.raises(StateError):
        ReLU().backward(np.ones(2))
    with pytest.raises(StateError):
        Sigmoid().backward(np.ones(2))


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("kind", [ReLU, Sigmoid])
def test_activation_gradients_match_finite_differences(seed, kind):
    rng = make_rng(seed)
    x = rng.standard_normal((3, 5))
    x[np.abs(x) < 1e-3] = 0.5  # stay clear of the ReLU kink
    act = kind()
    w_out = rng.standard_normal(x.shape)

    def f():
        return float(np.sum(act.forward(x) * w_out))

    act.forward(x)
    assert rel_error(act.backward(w_out), numeric_grad(f, x)) < 1e-5


# -- dropout -----------------------------------------------------------------

def test_dropout_rate_zero_identity():
    x = make_rng(0).standard_normal(100)
    layer = Dropout(0.0)
    layer.training = True
    np.testing.assert_array_equal(dropout_apply(x, layer, make_rng(1)), x)


def test_dropout_eval_identity():
    x = make_rng(0).standard_normal(100)
    layer = Dropout(0.3)
    layer.training = False
    np.testing.assert_array_equal(dropout_apply(x, layer, make_rng(1)), x)


@pytest.mark.parametrize("rate", [0.1, 0.2, 0.3])
def test_dropout_preserves_mean(rate):
    layer = Dropout(rate)
    layer.training = True
    out = dropout_apply(np.ones(100_000), layer, make_rng(11))
    assert 0.98 <= out.mean() <= 1.02
    survivors = out[out != 0]
    np.testing.assert_allclose(survivors, 1.0 / (1.0 - rate))


def test_dropout_backward_reuses_mask():
    layer = Dropout(0.5)
    layer.training = True
    out = layer.forward(np.ones(50), make_rng(2))
    np.testing.assert_array_equal(layer.backward(np.ones(50)), out)


def test_dropout_rate_bounds():
    with pytest.raises(ArgumentError):
        Dropout(1.0)
    with pytest.raises(ArgumentError):
        Dropout(-0.1)
