"""Building blocks: the separable-conv residual block, its two-plain-conv
baseline, encoder/decoder blocks, and an exact parameter-count oracle.

The counting convention that reproduces the published block totals:
convolutions are bias-free, and each batch normalization contributes four
numbers per channel (scale, shift, running mean, running variance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .layers import (
    BatchNorm2d,
    Chain,
    Conv2d,
    ConvTranspose2d,
    Layer,
    LeakyReLU,
    ReflectionPad2d,
    SeparableConv2d,
    ZeroPad2d,
    pad_for,
)

VARIANTS = ("original", "proposed")
PADDING_MODES = ("reflection", "zero")


@dataclass(frozen=True)
class ResidualBlockConfig:
    channels: int
    kernel: int = 3
    variant: str = "proposed"
    activation_slope: float = 0.2
    padding_mode: str = "reflection"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be a positive odd integer, got {self.kernel}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.padding_mode not in PADDING_MODES:
            raise ConfigError(f"unknown padding mode {self.padding_mode!r}")


@dataclass(frozen=True)
class LayerParameterCount:
    convolution_weights: int
    normalization_params: int

    @property
    def total(self) -> int:
        return self.convolution_weights + self.normalization_params


def count_parameters(config: ResidualBlockConfig) -> LayerParameterCount:
    """Closed-form parameter count for a residual block.

    Cross-checked in tests against the array sizes of an instantiated
    block, so the arithmetic here and the construction code verify each
    other.
    """
    c, k = config.channels, config.kernel
    plain = k * k * c * c
    if config.variant == "proposed":
        conv = plain + (k * k * c + c * c)
    else:
        conv = 2 * plain
    norm = 2 * 4 * c
    return LayerParameterCount(convolution_weights=conv, normalization_params=norm)


def _pad_layer(mode, width):
    return ReflectionPad2d(width) if mode == "reflection" else ZeroPad2d(width)


class ResidualBlock(Layer):
    """out = F(x) + x.

    proposed: F = [pad, conv, BN, LeakyReLU] then [pad, sepconv, BN, LeakyReLU]
    original: two plain-conv units in pre-activation order
              ([BN, ReLU, pad, conv] twice), kept for the parameter-count
              comparison; not used inside the generators.
    """

    def __init__(self, name, config: ResidualBlockConfig, rng=None,
                 dtype=np.float32):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        c, k = config.channels, config.kernel
        width = (k - 1) // 2
        mode = config.padding_mode
        bn = lambda n: BatchNorm2d(n, c, eps=config.bn_eps,
                                   momentum=config.bn_momentum, dtype=dtype)
        if config.variant == "proposed":
            act = lambda: LeakyReLU(config.activation_slope)
            self.body = Chain([
                _pad_layer(mode, width),
                Conv2d(name + ".conv", c, c, k, 1, rng, dtype),
                bn(name + ".bn1"),
                act(),
                _pad_layer(mode, width),
                SeparableConv2d(name + ".sep", c, c, k, rng, dtype),
                bn(name + ".bn2"),
                act(),
            ])
        else:
            relu = lambda: LeakyReLU(0.0)
            self.body = Chain([
                bn(name + ".bn1"),
                relu(),
                _pad_layer(mode, width),
                Conv2d(name + ".conv1", c, c, k, 1, rng, dtype),
                bn(name + ".bn2"),
                relu(),
                _pad_layer(mode, width),
                Conv2d(name + ".conv2", c, c, k, 1, rng, dtype),
            ])

    def parameters(self):
        return self.body.parameters()

    def buffers(self):
        return self.body.buffers()

    def parameter_total(self) -> int:
        """Actual stored-array count under the 4-per-channel BN convention."""
        return sum(p.data.size for p in self.parameters()) + sum(
            b.data.size for b in self.buffers()
        )

    def forward(self, x, training=False):
        if x.shape[-1] != self.config.channels:
            raise ConfigError(
                f"residual block built for {self.config.channels} channels, "
                f"input has {x.shape[-1]}"
            )
        if min(x.shape[1:3]) < self.config.kernel:
            raise InputError(
                f"spatial extent {x.shape[1:3]} smaller than kernel "
                f"{self.config.kernel}"
            )
        return self.body.forward(x, training) + x

    def backward(self, gy, accum=True):
        return self.body.backward(gy, accum) + gy


class EncoderBlock(Layer):
    """pad -> conv -> BN -> LeakyReLU; stride 2 halves the spatial dims."""

    def __init__(self, name, in_channels, out_channels, kernel, stride=1,
                 slope=0.2, rng=None, dtype=np.float32, norm=True,
                 padding_mode="reflection"):
        if stride not in (1, 2):
            raise ConfigError(f"encoder stride must be 1 or 2, got {stride}")
        self.stride = stride
        width = pad_for(kernel, stride)
        layers = [
            _pad_layer(padding_mode, width),
            Conv2d(name + ".conv", in_channels, out_channels, kernel, stride,
                   rng, dtype),
        ]
        if norm:
            layers.append(BatchNorm2d(name + ".bn", out_channels, dtype=dtype))
        layers.append(LeakyReLU(slope))
        self.body = Chain(layers)

    def parameters(self):
        return self.body.parameters()

    def buffers(self):
        return self.body.buffers()

    def forward(self, x, training=False):
        if self.stride == 2 and (x.shape[1] % 2 or x.shape[2] % 2):
            raise InputError(
                f"stride-2 encoder needs even spatial dims, got {x.shape[1:3]}"
            )
        return self.body.forward(x, training)

    def backward(self, gy, accum=True):
        return self.body.backward(gy, accum)


class DecoderBlock(Layer):
    """Transposed conv (stride 2) -> BN -> LeakyReLU; doubles spatial dims."""

    def __init__(self, name, in_channels, out_channels, kernel=3, slope=0.2,
                 rng=None, dtype=np.float32):
        self.body = Chain([
            ConvTranspose2d(name + ".deconv", in_channels, out_channels,
                            kernel, 2, rng, dtype),
            BatchNorm2d(name + ".bn", out_channels, dtype=dtype),
            LeakyReLU(slope),
        ])

    def parameters(self):
        return self.body.parameters()

    def buffers(self):
        return self.body.buffers()

    def forward(self, x, training=False):
        return self.body.forward(x, training)

    def backward(self, gy, accum=True):
        return self.body.backward(gy, accum)
