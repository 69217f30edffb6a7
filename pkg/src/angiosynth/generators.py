"""Coarse and fine generators.

The coarse generator works at half resolution and, besides its own
angiogram, exposes the activation of its last decoder block as a feature
map. The fine generator downsamples once, adds that feature map to its
encoder activation elementwise, and decodes back to full resolution.

Stride plan: the first encoder block of each generator is stride 1 with a
wide kernel; every later encoder block is stride 2. Decoders mirror the
stride-2 encoders one for one, so both generators are exactly
size-preserving. The strides are a config field, so alternative readings
of the block/stride layout stay expressible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import DecoderBlock, EncoderBlock, ResidualBlock, ResidualBlockConfig
from .errors import ConfigError
from .layers import Chain, Conv2d, ReflectionPad2d, Tanh

VARIANT_BLOCKS = {
    # variant -> (encoder_blocks, residual_blocks, decoder_blocks)
    "coarse": (4, 9, 3),
    "fine": (2, 3, 1),
}


@dataclass(frozen=True)
class GeneratorConfig:
    variant: str
    input_size: int
    base_channels: int
    encoder_blocks: int
    residual_blocks: int
    decoder_blocks: int
    output_channels: int = 1
    input_channels: int = 3
    first_kernel: int = 7
    kernel: int = 3
    activation_slope: float = 0.2
    encoder_strides: tuple = field(default=None)

    def __post_init__(self):
        if self.variant not in VARIANT_BLOCKS:
            raise ConfigError(f"unknown generator variant {self.variant!r}")
        expected = VARIANT_BLOCKS[self.variant]
        got = (self.encoder_blocks, self.residual_blocks, self.decoder_blocks)
        if got != expected:
            raise ConfigError(
                f"{self.variant} generator requires (enc, res, dec) blocks "
                f"{expected}, got {got}"
            )
        strides = self.encoder_strides
        if strides is None:
            strides = (1,) + (2,) * (self.encoder_blocks - 1)
            object.__setattr__(self, "encoder_strides", strides)
        if len(strides) != self.encoder_blocks:
            raise ConfigError("one stride per encoder block required")
        n_down = sum(1 for s in strides if s == 2)
        if n_down != self.decoder_blocks:
            raise ConfigError(
                f"{n_down} stride-2 encoders cannot be undone by "
                f"{self.decoder_blocks} decoders"
            )
        if self.input_size % (2 ** n_down):
            raise ConfigError(
                f"input size {self.input_size} not divisible by "
                f"{2 ** n_down}"
            )

    @classmethod
    def coarse(cls, input_size=256, base_channels=64, **kw):
        return cls("coarse", input_size, base_channels, 4, 9, 3, **kw)

    @classmethod
    def fine(cls, input_size=512, base_channels=32, **kw):
        return cls("fine", input_size, base_channels, 2, 3, 1, **kw)

    @property
    def feature_channels(self) -> int:
        """Channels at the handoff site.

        coarse: channels of the last decoder (= base), fine: channels of
        the encoder output the feature is added to.
        """
        if self.variant == "coarse":
            return self.base_channels
        n_down = sum(1 for s in self.encoder_strides if s == 2)
        return self.base_channels * (2 ** n_down)

    @property
    def feature_size(self) -> int:
        if self.variant == "coarse":
            return self.input_size
        n_down = sum(1 for s in self.encoder_strides if s == 2)
        return self.input_size // (2 ** n_down)


@dataclass(frozen=True)
class CoarseOutput:
    angiogram: np.ndarray   # (N, S, S, 1), tanh range
    feature: np.ndarray     # (N, S, S, base_channels)


class _GeneratorBase:
    """Shared encoder/residual/decoder/head scaffolding."""

    def __init__(self, config: GeneratorConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        cfg = config
        slope = cfg.activation_slope

        self.encoders = []
        ch = cfg.input_channels
        width = cfg.base_channels
        for i, stride in enumerate(cfg.encoder_strides):
            k = cfg.first_kernel if i == 0 else cfg.kernel
            # channel width doubles at every stride-2 block after the first
            if i > 0 and stride == 2:
                width *= 2
            self.encoders.append(
                EncoderBlock(f"enc{i}", ch, width, k, stride, slope, rng, dtype)
            )
            ch = width

        res_cfg = ResidualBlockConfig(
            channels=ch, kernel=cfg.kernel, variant="proposed",
            activation_slope=slope,
        )
        self.residuals = [
            ResidualBlock(f"res{i}", res_cfg, rng, dtype)
            for i in range(cfg.residual_blocks)
        ]

        self.decoders = []
        for i in range(cfg.decoder_blocks):
            width //= 2
            self.decoders.append(
                DecoderBlock(f"dec{i}", ch, width, cfg.kernel, slope, rng, dtype)
            )
            ch = width

        self.head = Chain([
            ReflectionPad2d((cfg.first_kernel - 1) // 2),
            Conv2d("head.conv", ch, cfg.output_channels, cfg.first_kernel, 1,
                   rng, dtype),
            Tanh(),
        ])

        self._all = (
            list(self.encoders) + list(self.residuals) + list(self.decoders)
            + [self.head]
        )

    def named_parameters(self):
        return [(p.name, p) for layer in self._all for p in layer.parameters()]

    def named_buffers(self):
        return [(b.name, b) for layer in self._all for b in layer.buffers()]

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_count(self, include_tracked=True) -> int:
        total = sum(p.data.size for p in self.parameters())
        if include_tracked:
            total += sum(b.data.size for _, b in self.named_buffers())
        return total

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _check_input(self, x):
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.input_size \
                or x.shape[2] != cfg.input_size \
                or x.shape[3] != cfg.input_channels:
            raise ConfigError(
                f"{cfg.variant} generator expects (N, {cfg.input_size}, "
                f"{cfg.input_size}, {cfg.input_channels}), got {x.shape}"
            )


class CoarseGenerator(_GeneratorBase):
    """Half-resolution generator; returns (angiogram, decoder feature map)."""

    def __init__(self, config: GeneratorConfig, seed=0, dtype=np.float32):
        if config.variant != "coarse":
            raise ConfigError("CoarseGenerator needs a coarse config")
        super().__init__(config, seed, dtype)

    def forward(self, x, training=False) -> CoarseOutput:
        self._check_input(x)
        h = x
        for block in self.encoders:
            h = block.forward(h, training)
        for block in self.residuals:
            h = block.forward(h, training)
        for block in self.decoders:
            h = block.forward(h, training)
        angio = self.head.forward(h, training)
        return CoarseOutput(angiogram=angio, feature=h)

    def backward(self, g_angio, g_feature=None, accum=True):
        g = self.head.backward(g_angio, accum)
        if g_feature is not None:
            g = g + g_feature
        for block in reversed(self.decoders):
            g = block.backward(g, accum)
        for block in reversed(self.residuals):
            g = block.backward(g, accum)
        for block in reversed(self.encoders):
            g = block.backward(g, accum)
        return g


class FineGenerator(_GeneratorBase):
    """Full-resolution generator consuming the coarse feature map."""

    def __init__(self, config: GeneratorConfig, seed=0, dtype=np.float32):
        if config.variant != "fine":
            raise ConfigError("FineGenerator needs a fine config")
        super().__init__(config, seed, dtype)

    def encode(self, x, training=False):
        self._check_input(x)
        h = x
        for block in self.encoders:
            h = block.forward(h, training)
        return h

    def decode_from(self, h, training=False):
        for block in self.residuals:
            h = block.forward(h, training)
        for block in self.decoders:
            h = block.forward(h, training)
        return self.head.forward(h, training)

    def forward(self, x, feature, training=False):
        h = self.encode(x, training)
        if feature.shape != h.shape:
            raise ConfigError(
                f"coarse feature shape {feature.shape} does not match the "
                f"encoder activation {h.shape}"
            )
        return self.decode_from(h + feature, training)

    def backward(self, gy, accum=True):
        """Returns (grad wrt input image, grad wrt injected feature)."""
        g = self.head.backward(gy, accum)
        for block in reversed(self.decoders):
            g = block.backward(g, accum)
        for block in reversed(self.residuals):
            g = block.backward(g, accum)
        g_feature = g
        for block in reversed(self.encoders):
            g = block.backward(g, accum)
        return g, g_feature


def build_generator(config: GeneratorConfig, seed=0, dtype=np.float32):
    if config.variant == "coarse":
        return CoarseGenerator(config, seed, dtype)
    return FineGenerator(config, seed, dtype)


def check_handoff(coarse_cfg: GeneratorConfig, fine_cfg: GeneratorConfig):
    """The coarse feature must drop exactly onto the fine encoder output."""
    if coarse_cfg.input_size != fine_cfg.feature_size:
        raise ConfigError(
            f"coarse output size {coarse_cfg.input_size} != fine handoff "
            f"size {fine_cfg.feature_size}"
        )
    if coarse_cfg.feature_channels != fine_cfg.feature_channels:
        raise ConfigError(
            f"coarse feature channels {coarse_cfg.feature_channels} != fine "
            f"handoff channels {fine_cfg.feature_channels}"
        )


def default_generator_configs():
    """Full-scale pair: fine at 512 (base 32), coarse at 256 (base 64)."""
    coarse = GeneratorConfig.coarse(256, 64)
    fine = GeneratorConfig.fine(512, 32)
    check_handoff(coarse, fine)
    return coarse, fine


def toy_generator_configs(fine_size=64, base_channels=4):
    """Proportionally shrunk pair for tests and desk-scale training."""
    coarse = GeneratorConfig.coarse(fine_size // 2, 2 * base_channels)
    fine = GeneratorConfig.fine(fine_size, base_channels)
    check_handoff(coarse, fine)
    return coarse, fine
