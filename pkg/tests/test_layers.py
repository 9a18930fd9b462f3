import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmffnn.errors import ConfigError, DomainError, ShapeError, StateError
from pmffnn.gradcheck import numeric_grad, relative_error
from pmffnn.layers import (
    SELU_ALPHA,
    SELU_LAMBDA,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    LayerSpec,
    Mode,
    activation_forward,
    build_layer,
    dropout_forward,
    layer_backward,
    param_count,
)
from pmffnn.tensor_core import Rng

# --- dense ---------------------------------------------------------------


def test_dense_identity(rng):
    layer = Dense(LayerSpec.dense(3, 3))
    layer.params["W"] = np.eye(3)
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(layer.forward(x), x)
    g = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(layer_backward(layer, g), g)


def test_dense_zero_weights_bias_only():
    layer = Dense(LayerSpec.dense(3, 2))
    layer.params["b"] = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(layer.forward(np.ones((5, 3))), np.tile([1.0, 2.0], (5, 1)))


def test_dense_matches_loop_oracle(rng):
    layer = Dense(LayerSpec.dense(4, 2), Rng(3))
    layer.params["b"] = rng.normal(size=(1, 2))
    x = rng.normal(size=(3, 4))
    W, b = layer.params["W"], layer.params["b"]
    expect = [[sum(x[i, k] * W[k, j] for k in range(4)) + b[0, j] for j in range(2)] for i in range(3)]
    np.testing.assert_allclose(layer.forward(x), expect, rtol=0, atol=1e-12)


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        Dense(LayerSpec.dense(3, 2)).forward(np.ones((2, 4)))


def test_dense_lecun_init_scale():
    W = Dense(LayerSpec.dense(400, 300), Rng(0)).params["W"]
    assert W.std() == pytest.approx(1 / math.sqrt(400), rel=0.02)


# --- batchnorm -----------------------------------------------------------


def test_batchnorm_constant_column():
    bn = BatchNorm(LayerSpec.batchnorm(2))
    x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    np.testing.assert_array_equal(bn.forward(x, Mode.TRAINING)[:, 0], 0.0)


def test_batchnorm_gamma_zero_gives_beta(rng):
    bn = BatchNorm(LayerSpec.batchnorm(3))
    bn.params["gamma"][:] = 0.0
    bn.params["beta"] = np.array([[1.0, -2.0, 0.5]])
    y = bn.forward(rng.normal(size=(4, 3)), Mode.TRAINING)
    np.testing.assert_array_equal(y, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_batchnorm_two_row_example():
    y = BatchNorm(LayerSpec.batchnorm(1)).forward(np.array([[1.0], [3.0]]), Mode.TRAINING)
    # (x - 2) / sqrt(1 + 1e-5)
    expected = np.array([[-1.0], [1.0]]) / math.sqrt(1 + 1e-5)
    np.testing.assert_allclose(y, expected, rtol=0, atol=1e-12)
    assert np.max(np.abs(y - [[-1.0], [1.0]])) < 1e-4


def test_batchnorm_training_normalizes(rng):
    for _ in range(20):
        n, d = rng.integers(2, 30), rng.integers(1, 8)
        x = rng.normal(3.0, 5.0, size=(n, d))
        y = BatchNorm(LayerSpec.batchnorm(d)).forward(x, Mode.TRAINING)
        assert np.all(np.abs(y.mean(axis=0)) < 1e-9)
        # eps shrinks the output variance to var / (var + eps)
        var_in = x.var(axis=0)
        np.testing.assert_allclose(y.var(axis=0), var_in / (var_in + 1e-5), rtol=1e-12)
        wide = var_in >= 10.0
        assert np.all(np.abs(y.var(axis=0)[wide] - 1.0) < 1e-6)


def test_batchnorm_single_row_training_rejected():
    with pytest.raises(DomainError):
        BatchNorm(LayerSpec.batchnorm(2)).forward(np.ones((1, 2)), Mode.TRAINING)


def test_batchnorm_running_stats_and_inference():
    bn = BatchNorm(LayerSpec.batchnorm(1), momentum=0.1)
    bn.forward(np.array([[1.0], [3.0]]), Mode.TRAINING)
    np.testing.assert_allclose(bn.buffers["running_mean"], [[0.2]])
    np.testing.assert_allclose(bn.buffers["running_var"], [[0.9 + 0.1 * 1.0]])
    y = bn.forward(np.array([[0.2]]), Mode.INFERENCE)
    np.testing.assert_allclose(y, [[0.0]], atol=1e-15)
    assert np.all(bn.buffers["running_var"] >= 0)


# --- dropout -------------------------------------------------------------


def test_dropout_rate_zero_identity(rng):
    x = rng.normal(size=(4, 5))
    y, mask = dropout_forward(0.0, x, Mode.TRAINING, Rng(0))
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(mask, 1.0)


@pytest.mark.parametrize("rate", [0.0, 0.3, 0.9])
def test_dropout_inference_identity(rng, rate):
    x = rng.normal(size=(6, 7))
    y, mask = dropout_forward(rate, x, Mode.INFERENCE, None)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(mask, 1.0)


def test_dropout_monte_carlo():
    x = np.ones((100, 1000))
    y, mask = dropout_forward(0.3, x, Mode.TRAINING, Rng(99))
    kept = (mask > 0).mean()
    assert abs(kept - 0.70) < 0.01
    assert abs(y.mean() - 1.0) < 0.02
    np.testing.assert_allclose(mask[mask > 0], 1 / 0.7)


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_bad_rate(rate):
    with pytest.raises(DomainError):
        dropout_forward(rate, np.ones((2, 2)), Mode.TRAINING, Rng(0))
    with pytest.raises(ConfigError):
        LayerSpec.dropout(2, rate)


def test_dropout_backward_is_mask(rng):
    layer = Dropout(LayerSpec.dropout(5, 0.4), Rng(1))
    layer.forward(rng.normal(size=(3, 5)), Mode.TRAINING)
    g = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(layer.backward(g), g * layer.cache["mask"])


# --- activations ---------------------------------------------------------


def test_activation_points():
    assert activation_forward("selu", np.zeros((1, 1)))[0, 0] == 0.0
    assert activation_forward("sigmoid", np.zeros((1, 1)))[0, 0] == 0.5
    np.testing.assert_allclose(activation_forward("softmax", np.full((2, 4), 3.3)), 0.25, rtol=0, atol=1e-15)
    np.testing.assert_allclose(activation_forward("softmax", [[0.0, math.log(3)]]), [[0.25, 0.75]], rtol=0, atol=1e-15)


def test_selu_constants():
    assert SELU_LAMBDA == 1.0507009873554805
    assert SELU_ALPHA == 1.6732632423543772
    y = activation_forward("selu", [[-1.0, 2.0]])
    np.testing.assert_allclose(y, [[SELU_LAMBDA * SELU_ALPHA * (math.exp(-1) - 1), SELU_LAMBDA * 2]])


def test_softmax_rows_and_shift_invariance(rng):
    for _ in range(50):
        x = rng.normal(0, 5, size=(rng.integers(1, 6), rng.integers(1, 9)))
        p = activation_forward("softmax", x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all((p > 0) & (p < 1)) or p.shape[1] == 1
        c = rng.normal(0, 50, size=(x.shape[0], 1))
        np.testing.assert_allclose(activation_forward("softmax", x + c), p, rtol=0, atol=1e-12)


def test_sigmoid_extremes_finite():
    y = activation_forward("sigmoid", [[-800.0, 800.0]])
    assert np.all(np.isfinite(y))
    np.testing.assert_array_equal(y, [[0.0, 1.0]])


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_selu_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    y = activation_forward("selu", [[lo, hi]])
    assert y[0, 0] <= y[0, 1]


def test_selu_continuous_at_zero():
    y = activation_forward("selu", [[-1e-12, 0.0, 1e-12]])
    assert np.max(np.abs(y)) < 1e-11


# --- conv1d --------------------------------------------------------------


def test_conv1d_identity_kernel(rng):
    layer = Conv1D(LayerSpec.conv1d(1, 5, 1, 1))
    layer.params["kernel"][:] = 1.0
    x = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_conv1d_moving_average():
    layer = Conv1D(LayerSpec.conv1d(1, 4, 1, 3))
    layer.params["kernel"][:] = 1 / 3
    np.testing.assert_allclose(layer.forward([[1.0, 2.0, 3.0, 4.0]]), [[2.0, 3.0]])


def test_conv1d_zero_kernel_bias():
    layer = Conv1D(LayerSpec.conv1d(2, 6, 3, 4))
    layer.params["b"][:] = 2.5
    np.testing.assert_array_equal(layer.forward(np.ones((2, 12))), 2.5)


def test_conv1d_sliding_window_oracle(rng):
    spec = LayerSpec.conv1d(2, 7, 3, 3)
    layer = Conv1D(spec, Rng(4))
    layer.params["b"] = rng.normal(size=(1, 3))
    x = rng.normal(size=(2, 14))
    K = layer.params["kernel"].reshape(3, 2, 3)
    y = layer.forward(x)
    for n in range(2):
        for o in range(3):
            for t in range(5):
                s = layer.params["b"][0, o]
                for c in range(2):
                    for j in range(3):
                        s += x[n, c * 7 + t + j] * K[o, c, j]
                assert y[n, o * 5 + t] == pytest.approx(s, abs=1e-12)


def test_conv1d_kernel_too_long():
    with pytest.raises(ConfigError):
        LayerSpec.conv1d(1, 3, 2, 4)


# --- backward contracts --------------------------------------------------


def test_backward_without_forward():
    for spec in (LayerSpec.dense(2, 2), LayerSpec.batchnorm(2), LayerSpec.act("relu", 2), LayerSpec.dropout(2, 0.1)):
        with pytest.raises(StateError):
            build_layer(spec, Rng(0)).backward(np.ones((2, 2)))


def test_backward_shape_mismatch():
    layer = Dense(LayerSpec.dense(2, 3), Rng(0))
    layer.forward(np.ones((4, 2)))
    with pytest.raises(ShapeError):
        layer.backward(np.ones((4, 2)))


def test_param_count_examples():
    assert param_count(LayerSpec.dense(4, 3)) == 15
    assert param_count(LayerSpec.dropout(9, 0.5)) == 0
    assert param_count(LayerSpec.batchnorm(16)) == 32
    assert param_count(LayerSpec.act("softmax", 5)) == 0
    assert param_count(LayerSpec.conv1d(2, 10, 4, 3)) == 3 * 2 * 4 + 4


def test_param_count_matches_state_shapes():
    for spec in (LayerSpec.dense(4, 3), LayerSpec.batchnorm(6), LayerSpec.conv1d(3, 8, 2, 5)):
        layer = build_layer(spec, Rng(0))
        assert sum(p.size for p in layer.params.values()) == param_count(spec)
        for k, p in layer.params.items():
            assert layer.grads[k].shape == p.shape


# --- finite-difference gradient checks -----------------------------------

TOL = 1e-4


def random_layer_case(kind, g):
    """A random small (spec, mode) for ``kind``; dims <= 8, batch <= 5."""
    n = int(g.integers(2, 6))
    d = int(g.integers(1, 9))
    if kind == "dense":
        return LayerSpec.dense(d, int(g.integers(1, 9))), Mode.TRAINING, n
    if kind == "batchnorm_train":
        return LayerSpec.batchnorm(d), Mode.TRAINING, n
    if kind == "batchnorm_infer":
        return LayerSpec.batchnorm(d), Mode.INFERENCE, n
    if kind == "dropout":
        return LayerSpec.dropout(d, float(g.uniform(0, 0.8))), Mode.TRAINING, n
    if kind == "conv1d":
        cin, length = int(g.integers(1, 3)), int(g.integers(1, 5))
        k = int(g.integers(1, length + 1))
        return LayerSpec.conv1d(cin, length, int(g.integers(1, 4)), k), Mode.TRAINING, n
    return LayerSpec.act(kind, d), Mode.TRAINING, n


def layer_gradcheck(spec, mode, n, seed):
    g = np.random.default_rng(seed)
    layer = build_layer(spec, Rng(seed))
    for name, p in layer.params.items():
        layer.params[name] = p + g.normal(0, 0.5, size=p.shape)
    if spec.kind == "batchnorm":
        layer.buffers["running_mean"] = g.normal(size=(1, spec.in_dim))
        layer.buffers["running_var"] = g.uniform(0.5, 2.0, size=(1, spec.in_dim))
    x = g.normal(size=(n, spec.in_dim))
    weights = g.normal(size=(n, spec.out_dim))
    saved = {k: v.copy() for k, v in layer.buffers.items()}

    def loss():
        layer.buffers.update({k: v.copy() for k, v in saved.items()})
        if isinstance(layer, Dropout):
            layer.rng = Rng(seed, 7)
        return float((layer.forward(x, mode) * weights).sum())

    loss()
    layer.zero_grad()
    dx = layer.backward(weights)
    errors = {"x": relative_error(dx, numeric_grad(loss, x))}
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for name, p in layer.params.items():
        errors[name] = relative_error(analytic[name], numeric_grad(loss, p))
    return errors


LAYER_KINDS = ["dense", "batchnorm_train", "batchnorm_infer", "dropout", "selu", "sigmoid", "relu", "softmax", "identity", "conv1d"]


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_layer_gradients_match_finite_differences(kind):
    g = np.random.default_rng(LAYER_KINDS.index(kind))
    worst = 0.0
    for trial in range(20):
        spec, mode, n = random_layer_case(kind, g)
        errs = layer_gradcheck(spec, mode, n, seed=1000 + trial)
        worst = max(worst, max(errs.values()))
    assert worst < TOL
