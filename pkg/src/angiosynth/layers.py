"""NHWC convolutional layers with hand-written forward/backward passes.

Everything here is plain numpy. Feature maps are batched arrays of shape
(N, H, W, C). A layer caches whatever its backward pass needs during
forward; call backward after the forward it belongs to (multiple backward
calls against one cached forward are fine, a new forward invalidates the
cache). Layers never update their own parameters; optimizers do.

Convolutions are bias-free throughout: every conv in the architecture is
followed either by batch normalization (whose shift replaces the bias) or
by a squashing output activation.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InputError

WEIGHT_INIT_STD = 0.02


class Parameter:
    """Trainable array plus its gradient accumulator."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


class Buffer:
    """Non-trainable tracked array (batch-norm running statistics)."""

    __slots__ = ("name", "data")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data

    def __repr__(self):
        return f"Buffer({self.name}, shape={self.data.shape})"


class Layer:
    """Base layer: forward/backward plus parameter/buffer discovery."""

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> list[Buffer]:
        return []

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, gy, accum=True):
        """Return grad w.r.t. the forward input; accum=True also adds
        parameter gradients into each Parameter.grad."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# convolution primitives (valid correlation, no padding; padding is an
# explicit layer so reflection vs zero padding stays a visible choice)
#
# Strategy: one full-image GEMM per kernel tap followed by a shifted
# strided add. The GEMM reshape is free on contiguous inputs, so there is
# no im2col gather; this is what keeps full-resolution forwards usable on
# a single core.
# ---------------------------------------------------------------------------


def _tap_slice(offset, count, stride):
    return slice(offset, offset + (count - 1) * stride + 1, stride)


def conv2d_forward(x, w, stride=1):
    """Valid cross-correlation. x: (N,H,W,C), w: (K,K,C,F) -> (N,OH,OW,F)."""
    n, h, wd, c = x.shape
    k = w.shape[0]
    if w.shape[2] != c:
        raise ConfigError(
            f"conv weight expects {w.shape[2]} input channels, got {c}"
        )
    if h < k or wd < k:
        raise InputError(f"spatial extent {h}x{wd} smaller than kernel {k}")
    oh = (h - k) // stride + 1
    ow = (wd - k) // stride + 1
    f = w.shape[3]
    if stride == 1:
        x = np.ascontiguousarray(x)
        if k == 1:
            return (x.reshape(-1, c) @ w[0, 0]).reshape(n, h, wd, f)
        if c * 4 <= f:
            # narrow input, wide output: GEMM over an explicit patch matrix
            # is far less traffic than per-tap accumulation; row-blocked so
            # the patch buffer stays small and gets reused
            w2 = w.reshape(k * k * c, f)
            y = np.empty((n, oh, ow, f), dtype=x.dtype)
            step = max(1, (8 << 20) // (ow * k * k * c * x.dtype.itemsize))
            for r0 in range(0, oh, step):
                r1 = min(oh, r0 + step)
                xb = x[:, r0 : r1 + k - 1]
                col = np.lib.stride_tricks.as_strided(
                    xb, (n, r1 - r0, ow, k, k, c),
                    (xb.strides[0], xb.strides[1], xb.strides[2],
                     xb.strides[1], xb.strides[2], xb.strides[3]),
                )
                a = np.ascontiguousarray(col).reshape(-1, k * k * c)
                y[:, r0:r1] = (a @ w2).reshape(n, r1 - r0, ow, f)
            return y
        x2 = x.reshape(-1, c)
        y = np.zeros((n, oh, ow, f), dtype=x.dtype)
        xw = np.empty((x2.shape[0], f), dtype=x.dtype)
        for ki in range(k):
            for li in range(k):
                np.matmul(x2, w[ki, li], out=xw)
                y += xw.reshape(n, h, wd, f)[
                    :, _tap_slice(ki, oh, 1), _tap_slice(li, ow, 1)
                ]
        return y
    # strided: few output pixels, so copying the tap slab is the cheap side
    y = np.zeros((n * oh * ow, f), dtype=x.dtype)
    for ki in range(k):
        for li in range(k):
            slab = x[:, _tap_slice(ki, oh, stride), _tap_slice(li, ow, stride)]
            y += np.ascontiguousarray(slab).reshape(-1, c) @ w[ki, li]
    return y.reshape(n, oh, ow, f)


def conv2d_backward_data(gy, w, stride, in_hw):
    """Gradient of conv2d_forward w.r.t. its input (tap-wise scatter)."""
    n, oh, ow, f = gy.shape
    k = w.shape[0]
    c = w.shape[2]
    h, wd = in_hw
    gy2 = np.ascontiguousarray(gy).reshape(-1, f)
    gx = np.zeros((n, h, wd, c), dtype=gy.dtype)
    gxw = np.empty((gy2.shape[0], c), dtype=gy.dtype)
    for ki in range(k):
        for li in range(k):
            np.matmul(gy2, w[ki, li].T, out=gxw)
            gx[
                :, _tap_slice(ki, oh, stride), _tap_slice(li, ow, stride)
            ] += gxw.reshape(n, oh, ow, c)
    return gx


def conv2d_backward_weight(x, gy, stride, k):
    """Gradient of conv2d_forward w.r.t. the weight. -> (K,K,C,F)."""
    n, oh, ow, f = gy.shape
    c = x.shape[3]
    gy2 = np.ascontiguousarray(gy).reshape(-1, f)
    gw = np.empty((k, k, c, f), dtype=x.dtype)
    for ki in range(k):
        for li in range(k):
            slab = x[:, _tap_slice(ki, oh, stride), _tap_slice(li, ow, stride)]
            gw[ki, li] = np.ascontiguousarray(slab).reshape(-1, c).T @ gy2
    return gw


def depthwise_forward(x, dw):
    """Per-channel valid correlation, stride 1. dw: (K,K,C)."""
    n, h, wd, c = x.shape
    k = dw.shape[0]
    if dw.shape[2] != c:
        raise ConfigError(
            f"depthwise weight expects {dw.shape[2]} channels, got {c}"
        )
    if h < k or wd < k:
        raise InputError(f"spatial extent {h}x{wd} smaller than kernel {k}")
    oh, ow = h - k + 1, wd - k + 1
    out = np.zeros((n, oh, ow, c), dtype=x.dtype)
    for ki in range(k):
        for li in range(k):
            out += x[:, ki : ki + oh, li : li + ow] * dw[ki, li]
    return out


def depthwise_backward_data(gy, dw, in_hw):
    n, oh, ow, c = gy.shape
    k = dw.shape[0]
    gx = np.zeros((n, in_hw[0], in_hw[1], c), dtype=gy.dtype)
    for ki in range(k):
        for li in range(k):
            gx[:, ki : ki + oh, li : li + ow] += gy * dw[ki, li]
    return gx


def depthwise_backward_weight(x, gy, k):
    n, oh, ow, c = gy.shape
    gdw = np.empty((k, k, c), dtype=x.dtype)
    for ki in range(k):
        for li in range(k):
            gdw[ki, li] = np.sum(
                x[:, ki : ki + oh, li : li + ow] * gy, axis=(0, 1, 2)
            )
    return gdw


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Conv2d(Layer):
    """Bias-free convolution; pair with an explicit padding layer."""

    def __init__(self, name, in_channels, out_channels, kernel, stride=1,
                 rng=None, dtype=np.float32):
        if kernel < 1 or in_channels < 1 or out_channels < 1:
            raise ConfigError("kernel and channel counts must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.normal(0.0, WEIGHT_INIT_STD,
                       (kernel, kernel, in_channels, out_channels))
        self.w = Parameter(name + ".w", w.astype(dtype))
        self.stride = stride
        self.kernel = kernel
        self._x = None

    def parameters(self):
        return [self.w]

    def forward(self, x, training=False):
        self._x = x
        return conv2d_forward(x, self.w.data, self.stride)

    def backward(self, gy, accum=True):
        if accum:
            self.w.grad += conv2d_backward_weight(
                self._x, gy, self.stride, self.kernel
            )
        return conv2d_backward_data(
            gy, self.w.data, self.stride, self._x.shape[1:3]
        )


class ConvTranspose2d(Layer):
    """Stride-2 style upsampling convolution (the adjoint of a strided conv).

    The full scatter output has side (H-1)*stride + K; the trailing excess
    rows/columns are cropped so the output side is exactly H*stride.
    """

    def __init__(self, name, in_channels, out_channels, kernel, stride=2,
                 rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.normal(0.0, WEIGHT_INIT_STD,
                       (kernel, kernel, in_channels, out_channels))
        self.w = Parameter(name + ".w", w.astype(dtype))
        self.stride = stride
        self.kernel = kernel
        self._x = None

    def parameters(self):
        return [self.w]

    def _full_hw(self, h, wd):
        s, k = self.stride, self.kernel
        return ((h - 1) * s + k, (wd - 1) * s + k)

    def forward(self, x, training=False):
        if x.shape[3] != self.w.data.shape[2]:
            raise ConfigError(
                f"transposed conv expects {self.w.data.shape[2]} input "
                f"channels, got {x.shape[3]}"
            )
        self._x = x
        n, h, wd, _ = x.shape
        full = conv2d_backward_data(
            x, self.w.data.transpose(0, 1, 3, 2), self.stride,
            self._full_hw(h, wd)
        )
        return full[:, : h * self.stride, : wd * self.stride]

    def backward(self, gy, accum=True):
        n, h, wd, _ = self._x.shape
        fh, fw = self._full_hw(h, wd)
        gyf = np.zeros((n, fh, fw, gy.shape[3]), dtype=gy.dtype)
        gyf[:, : h * self.stride, : wd * self.stride] = gy
        if accum:
            gw = conv2d_backward_weight(gyf, self._x, self.stride, self.kernel)
            self.w.grad += gw.transpose(0, 1, 3, 2)
        return conv2d_forward(
            gyf, self.w.data.transpose(0, 1, 3, 2), self.stride
        )


class SeparableConv2d(Layer):
    """Depth-wise KxK convolution followed by a point-wise 1x1 mix."""

    def __init__(self, name, channels, out_channels, kernel, rng=None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dw = Parameter(
            name + ".dw",
            rng.normal(0.0, WEIGHT_INIT_STD, (kernel, kernel, channels))
            .astype(dtype),
        )
        self.pw = Parameter(
            name + ".pw",
            rng.normal(0.0, WEIGHT_INIT_STD, (channels, out_channels))
            .astype(dtype),
        )
        self.kernel = kernel
        self._x = None
        self._mid = None

    def parameters(self):
        return [self.dw, self.pw]

    def forward(self, x, training=False):
        self._x = x
        self._mid = depthwise_forward(x, self.dw.data)
        return self._mid @ self.pw.data

    def backward(self, gy, accum=True):
        c = self.pw.data.shape[0]
        if accum:
            self.pw.grad += np.tensordot(
                self._mid, gy, axes=([0, 1, 2], [0, 1, 2])
            )
        gmid = gy @ self.pw.data.T
        if accum:
            self.dw.grad += depthwise_backward_weight(self._x, gmid, self.kernel)
        return depthwise_backward_data(gmid, self.dw.data, self._x.shape[1:3])


class BatchNorm2d(Layer):
    """Per-channel normalization over (N, H, W) with running statistics.

    Training mode normalizes by biased batch variance and updates the
    running mean/variance (unbiased) with the given momentum; inference
    mode uses the running statistics and is a pure function.
    """

    def __init__(self, name, channels, eps=1e-5, momentum=0.1,
                 dtype=np.float32):
        self.gamma = Parameter(name + ".gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(name + ".beta", np.zeros(channels, dtype=dtype))
        self.running_mean = Buffer(
            name + ".running_mean", np.zeros(channels, dtype=dtype)
        )
        self.running_var = Buffer(
            name + ".running_var", np.ones(channels, dtype=dtype)
        )
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def forward(self, x, training=False):
        if training:
            mu = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            n = x.size // x.shape[-1]
            m = self.momentum
            unbiased = var * (n / (n - 1)) if n > 1 else var
            self.running_mean.data[...] = (
                (1 - m) * self.running_mean.data + m * mu
            )
            self.running_var.data[...] = (
                (1 - m) * self.running_var.data + m * unbiased
            )
        else:
            mu = self.running_mean.data
            var = self.running_var.data
        istd = 1.0 / np.sqrt(var + self.eps)
        self._cache = (x, mu, istd, training)
        # fused y = x * (gamma * istd) + (beta - mu * gamma * istd)
        scale = self.gamma.data * istd
        y = x * scale
        y += self.beta.data - mu * scale
        return y

    def backward(self, gy, accum=True):
        x, mu, istd, training = self._cache
        xhat = (x - mu) * istd
        if accum:
            self.gamma.grad += np.sum(gy * xhat, axis=(0, 1, 2))
            self.beta.grad += np.sum(gy, axis=(0, 1, 2))
        if training:
            gxhat = gy * self.gamma.data
            mean_g = gxhat.mean(axis=(0, 1, 2))
            mean_gx = (gxhat * xhat).mean(axis=(0, 1, 2))
            return istd * (gxhat - mean_g - xhat * mean_gx)
        return gy * (self.gamma.data * istd)


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        self.slope = slope
        self._pos = None

    def forward(self, x, training=False):
        self._pos = x > 0
        return np.where(self._pos, x, x * x.dtype.type(self.slope))

    def backward(self, gy, accum=True):
        return np.where(self._pos, gy, gy * gy.dtype.type(self.slope))


class Tanh(Layer):
    def forward(self, x, training=False):
        self._y = np.tanh(x)
        return self._y

    def backward(self, gy, accum=True):
        return gy * (1.0 - self._y * self._y)


class Sigmoid(Layer):
    def forward(self, x, training=False):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, gy, accum=True):
        return gy * self._y * (1.0 - self._y)


class ReflectionPad2d(Layer):
    def __init__(self, pad):
        self.pad = pad
        self._in_hw = None

    def forward(self, x, training=False):
        p = self.pad
        if p == 0:
            self._in_hw = x.shape[1:3]
            return x
        h, w = x.shape[1:3]
        if h <= p or w <= p:
            raise InputError(
                f"spatial extent {h}x{w} too small for reflection pad {p}"
            )
        self._in_hw = (h, w)
        return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)), mode="reflect")

    def backward(self, gy, accum=True):
        p = self.pad
        if p == 0:
            return gy
        h, w = self._in_hw
        idx_h = np.pad(np.arange(h), p, mode="reflect")
        idx_w = np.pad(np.arange(w), p, mode="reflect")
        gx = np.zeros((gy.shape[0], h, w, gy.shape[3]), dtype=gy.dtype)
        # scatter-add through the reflection index map
        gxt = gx.transpose(1, 2, 0, 3)
        np.add.at(
            gxt, (idx_h[:, None], idx_w[None, :]), gy.transpose(1, 2, 0, 3)
        )
        return gx


class ZeroPad2d(Layer):
    def __init__(self, pad):
        self.pad = pad

    def forward(self, x, training=False):
        p = self.pad
        if p == 0:
            return x
        return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))

    def backward(self, gy, accum=True):
        p = self.pad
        if p == 0:
            return gy
        return gy[:, p:-p, p:-p, :]


class Chain(Layer):
    """Runs layers in sequence; backward walks them in reverse."""

    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]

    def buffers(self):
        return [b for l in self.layers for b in l.buffers()]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, gy, accum=True):
        for layer in reversed(self.layers):
            gy = layer.backward(gy, accum)
        return gy


def pad_for(kernel, stride):
    """Padding width that makes a strided conv map H exactly to H/stride."""
    return (kernel - stride + 1) // 2
