"""Layer-level numerics: forwards against brute-force oracles, backwards
against central finite differences."""

import numpy as np
import pytest

from angiosynth.errors import ConfigError, InputError
from angiosynth.layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    LeakyReLU,
    ReflectionPad2d,
    SeparableConv2d,
    Sigmoid,
    Tanh,
    ZeroPad2d,
    conv2d_forward,
    depthwise_forward,
)
from conftest import conv2d_direct, numerical_gradient, rel_error


@pytest.mark.parametrize("shape,k,f,stride", [
    ((2, 8, 8, 3), 3, 5, 1),
    ((1, 9, 9, 4), 3, 2, 2),
    ((1, 12, 10, 2), 1, 3, 1),
    ((2, 10, 10, 3), 7, 16, 1),   # col path (c*4 <= f)
    ((1, 8, 8, 6), 4, 4, 2),
    ((1, 7, 7, 5), 7, 1, 1),
])
def test_conv_forward_matches_direct(rng, shape, k, f, stride):
    x = rng.normal(0, 1, shape)
    w = rng.normal(0, 1, (k, k, shape[-1], f))
    assert rel_error(conv2d_forward(x, w, stride),
                     conv2d_direct(x, w, stride)) < 1e-10


def test_conv_channel_mismatch_raises(rng):
    layer = Conv2d("c", 4, 2, 3, rng=rng, dtype=np.float64)
    with pytest.raises(ConfigError):
        layer.forward(rng.normal(0, 1, (1, 6, 6, 3)))


def test_conv_too_small_raises(rng):
    layer = Conv2d("c", 2, 2, 5, rng=rng, dtype=np.float64)
    with pytest.raises(InputError):
        layer.forward(rng.normal(0, 1, (1, 3, 3, 2)))


def _layer_fd_check(layer, x, rng, training=True, tol=1e-6):
    """FD-check parameter and input gradients of a single layer."""
    proj = rng.normal(0, 1, layer.forward(x, training).shape)

    def loss():
        return float(np.sum(layer.forward(x, training) * proj))

    for p in layer.parameters():
        p.zero_grad()
    layer.forward(x, training)
    gx = layer.backward(proj.copy(), accum=True)
    for p in layer.parameters():
        num = numerical_gradient(loss, p.data)
        assert rel_error(p.grad, num) < tol, p.name
    num_x = numerical_gradient(loss, x)
    assert rel_error(gx, num_x) < tol


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_fd(rng, stride):
    layer = Conv2d("c", 3, 4, 3, stride, rng, np.float64)
    _layer_fd_check(layer, rng.normal(0, 1, (2, 6, 6, 3)), rng)


def test_conv_backward_fd_col_path(rng):
    layer = Conv2d("c", 2, 16, 5, 1, rng, np.float64)
    _layer_fd_check(layer, rng.normal(0, 1, (1, 7, 7, 2)), rng)


def test_conv_transpose_doubles_and_fd(rng):
    layer = ConvTranspose2d("t", 3, 2, 3, 2, rng, np.float64)
    x = rng.normal(0, 1, (2, 5, 4, 3))
    assert layer.forward(x).shape == (2, 10, 8, 2)
    _layer_fd_check(layer, x, rng)


def test_separable_hand_example():
    layer = SeparableConv2d("s", 1, 1, 1, dtype=np.float64)
    layer.dw.data[...] = 2.0
    layer.pw.data[...] = 3.0
    out = layer.forward(np.ones((1, 1, 1, 1)))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == pytest.approx(6.0, abs=1e-15)


def test_separable_zero_weights_zero_output(rng):
    layer = SeparableConv2d("s", 3, 3, 3, rng, np.float64)
    layer.dw.data[...] = 0.0
    layer.pw.data[...] = 0.0
    out = layer.forward(rng.normal(0, 1, (1, 6, 6, 3)))
    assert np.all(out == 0.0)


def test_separable_equals_direct_decomposition(rng):
    """Depthwise KxK then 1x1 mix, against an independent composition of
    per-channel direct convolution and explicit channel mixing."""
    c, k = 4, 3
    layer = SeparableConv2d("s", c, c, k, rng, np.float64)
    x = rng.normal(0, 1, (1, 8, 8, c))
    got = layer.forward(x)

    mid = np.zeros((1, 6, 6, c))
    for ci in range(c):
        w_ci = np.zeros((k, k, 1, 1))
        w_ci[:, :, 0, 0] = layer.dw.data[:, :, ci]
        mid[..., ci : ci + 1] = conv2d_direct(x[..., ci : ci + 1], w_ci)
    expected = np.zeros_like(mid)
    for fo in range(c):
        expected[..., fo] = sum(
            mid[..., ci] * layer.pw.data[ci, fo] for ci in range(c)
        )
    assert np.max(np.abs(got - expected)) < 1e-10


def test_separable_channel_mismatch(rng):
    layer = SeparableConv2d("s", 4, 4, 3, rng, np.float64)
    with pytest.raises(ConfigError):
        layer.forward(rng.normal(0, 1, (1, 6, 6, 3)))


def test_separable_backward_fd(rng):
    layer = SeparableConv2d("s", 3, 5, 3, rng, np.float64)
    _layer_fd_check(layer, rng.normal(0, 1, (2, 6, 6, 3)), rng)


def test_separable_param_count_convention():
    # C=32, K=3, bias-free: 3*3*32 depthwise + 32*32 pointwise
    layer = SeparableConv2d("s", 32, 32, 3)
    n = sum(p.data.size for p in layer.parameters())
    assert layer.dw.data.size == 288
    assert layer.pw.data.size == 1024
    assert n == 1312


def test_depthwise_forward_matches_shifted_sum(rng):
    x = rng.normal(0, 1, (2, 7, 7, 3))
    dw = rng.normal(0, 1, (3, 3, 3))
    got = depthwise_forward(x, dw)
    expected = np.zeros((2, 5, 5, 3))
    for ci in range(3):
        w_ci = np.zeros((3, 3, 1, 1))
        w_ci[:, :, 0, 0] = dw[:, :, ci]
        expected[..., ci] = conv2d_direct(x[..., ci : ci + 1], w_ci)[..., 0]
    assert rel_error(got, expected) < 1e-12


class TestBatchNorm:
    def test_train_forward_matches_manual(self, rng):
        bn = BatchNorm2d("bn", 3, dtype=np.float64)
        bn.gamma.data[...] = [1.0, 2.0, 0.5]
        bn.beta.data[...] = [0.0, -1.0, 0.25]
        x = rng.normal(2, 3, (2, 4, 4, 3))
        y = bn.forward(x, training=True)
        mu = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        manual = bn.gamma.data * (x - mu) / np.sqrt(var + bn.eps) + bn.beta.data
        assert rel_error(y, manual) < 1e-12

    def test_running_stats_update(self, rng):
        bn = BatchNorm2d("bn", 2, momentum=0.1, dtype=np.float64)
        x = rng.normal(1, 2, (2, 4, 4, 2))
        bn.forward(x, training=True)
        mu = x.mean(axis=(0, 1, 2))
        n = x.size // 2
        var_u = x.var(axis=(0, 1, 2)) * n / (n - 1)
        assert rel_error(bn.running_mean.data, 0.9 * 0 + 0.1 * mu) < 1e-12
        assert rel_error(bn.running_var.data, 0.9 * 1 + 0.1 * var_u) < 1e-12

    def test_eval_uses_running_stats(self, rng):
        bn = BatchNorm2d("bn", 2, dtype=np.float64)
        bn.running_mean.data[...] = [1.0, -1.0]
        bn.running_var.data[...] = [4.0, 0.25]
        x = rng.normal(0, 1, (1, 3, 3, 2))
        y = bn.forward(x, training=False)
        manual = (x - bn.running_mean.data) / np.sqrt(
            bn.running_var.data + bn.eps
        )
        assert rel_error(y, manual) < 1e-12

    @pytest.mark.parametrize("training", [True, False])
    def test_backward_fd(self, rng, training):
        bn = BatchNorm2d("bn", 3, dtype=np.float64)
        bn.gamma.data[...] = rng.normal(1, 0.2, 3)
        bn.beta.data[...] = rng.normal(0, 0.2, 3)
        bn.running_mean.data[...] = rng.normal(0, 1, 3)
        bn.running_var.data[...] = rng.uniform(0.5, 2.0, 3)
        x = rng.normal(0, 1, (2, 4, 4, 3))
        rm, rv = bn.running_mean.data.copy(), bn.running_var.data.copy()

        proj = rng.normal(0, 1, x.shape)

        def loss():
            bn.running_mean.data[...] = rm
            bn.running_var.data[...] = rv
            return float(np.sum(bn.forward(x, training) * proj))

        for p in bn.parameters():
            p.zero_grad()
        loss()
        gx = bn.backward(proj.copy(), accum=True)
        for p in bn.parameters():
            assert rel_error(p.grad, numerical_gradient(loss, p.data)) < 1e-6
        assert rel_error(gx, numerical_gradient(loss, x)) < 1e-6


@pytest.mark.parametrize("layer_cls", [Tanh, Sigmoid])
def test_activation_fd(rng, layer_cls):
    _layer_fd_check(layer_cls(), rng.normal(0, 1, (2, 5, 5, 3)), rng)


def test_leaky_relu_fd(rng):
    _layer_fd_check(LeakyReLU(0.2), rng.normal(0, 1, (2, 5, 5, 3)), rng)


def test_leaky_relu_values():
    lr = LeakyReLU(0.2)
    x = np.array([[[[-2.0, 0.5]]]])
    assert np.allclose(lr.forward(x), [[[[-0.4, 0.5]]]])


def test_sigmoid_range(rng):
    y = Sigmoid().forward(rng.normal(0, 10, (1, 4, 4, 2)))
    assert np.all(y > 0) and np.all(y < 1)


def test_reflection_pad_matches_numpy(rng):
    x = rng.normal(0, 1, (2, 5, 6, 3))
    got = ReflectionPad2d(2).forward(x)
    expected = np.pad(x, ((0, 0), (2, 2), (2, 2), (0, 0)), mode="reflect")
    assert np.array_equal(got, expected)


def test_reflection_pad_backward_fd(rng):
    _layer_fd_check(ReflectionPad2d(2), rng.normal(0, 1, (1, 5, 5, 2)), rng)


def test_reflection_pad_too_small(rng):
    with pytest.raises(InputError):
        ReflectionPad2d(3).forward(rng.normal(0, 1, (1, 3, 3, 1)))


def test_zero_pad_roundtrip(rng):
    x = rng.normal(0, 1, (1, 4, 4, 2))
    pad = ZeroPad2d(2)
    y = pad.forward(x)
    assert y.shape == (1, 8, 8, 2)
    assert np.array_equal(pad.backward(y), x)
