"""Four conditional patch discriminators over a three-scale image pyramid.

Each discriminator sees the fundus photo and the angiogram concatenated
to a 4-channel input at its scale and emits a grid of per-patch
real/fake probabilities of side input_size / 8. The four instances are
grouped as d_fine = [d1_fine, d2_fine] (full and half scale, paired with
the fine generator) and d_coarse = [d1_coarse, d2_coarse] (half and
quarter scale, paired with the coarse generator). Weights are never
shared across scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import EncoderBlock
from .errors import ConfigError, InputError
from .layers import Chain, Conv2d, ReflectionPad2d, Sigmoid
from .resample import ImagePyramid

DISCRIMINATOR_NAMES = ("d1_fine", "d2_fine", "d1_coarse", "d2_coarse")

# which pyramid level each discriminator judges (coarse outputs are born
# at half resolution, which forces this assignment)
LEVEL_ASSIGNMENT = {"d1_fine": 0, "d2_fine": 1, "d1_coarse": 1, "d2_coarse": 2}

GROUPS = {
    "fine": ("d1_fine", "d2_fine"),
    "coarse": ("d1_coarse", "d2_coarse"),
}


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_size: int
    input_channels: int = 4
    encoder_blocks: int = 3
    base_channels: int = 64
    kernel: int = 4
    patch_kernel: int = 3
    activation_slope: float = 0.2

    def __post_init__(self):
        if self.input_size % (2 ** self.encoder_blocks):
            raise ConfigError(
                f"input size {self.input_size} not divisible by "
                f"2^{self.encoder_blocks}"
            )

    @property
    def patch_output_size(self) -> int:
        return self.input_size // (2 ** self.encoder_blocks)


def default_discriminator_configs(base_size=512, base_channels=64):
    """The four instances at scales [1, 1/2, 1/2, 1/4] of base_size."""
    if base_size % 4:
        raise ConfigError(f"base size {base_size} must be divisible by 4")
    sizes = {
        "d1_fine": base_size,
        "d2_fine": base_size // 2,
        "d1_coarse": base_size // 2,
        "d2_coarse": base_size // 4,
    }
    return {
        name: DiscriminatorConfig(size, base_channels=base_channels)
        for name, size in sizes.items()
    }


class PatchDiscriminator:
    """Three stride-2 encoder blocks, then a stride-1 conv to one channel
    and a sigmoid. No normalization on the first block."""

    def __init__(self, config: DiscriminatorConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        slope = config.activation_slope
        layers = []
        ch = config.input_channels
        width = config.base_channels
        for i in range(config.encoder_blocks):
            layers.append(
                EncoderBlock(f"enc{i}", ch, width, config.kernel, 2, slope,
                             rng, dtype, norm=(i > 0))
            )
            ch = width
            width *= 2
        layers += [
            ReflectionPad2d((config.patch_kernel - 1) // 2),
            Conv2d("patch.conv", ch, 1, config.patch_kernel, 1, rng, dtype),
            Sigmoid(),
        ]
        self.body = Chain(layers)

    def named_parameters(self):
        return [(p.name, p) for p in self.body.parameters()]

    def named_buffers(self):
        return [(b.name, b) for b in self.body.buffers()]

    def parameters(self):
        return self.body.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def _check(self, fundus, angio):
        s = self.config.input_size
        if fundus.ndim != 4 or angio.ndim != 4:
            raise InputError("discriminator inputs must be NHWC batches")
        if fundus.shape[:3] != angio.shape[:3]:
            raise InputError(
                f"fundus {fundus.shape} and angiogram {angio.shape} "
                f"do not align"
            )
        if fundus.shape[1] != s or fundus.shape[2] != s:
            raise InputError(
                f"discriminator built for {s}x{s}, got "
                f"{fundus.shape[1]}x{fundus.shape[2]}"
            )
        if fundus.shape[3] + angio.shape[3] != self.config.input_channels:
            raise InputError(
                f"expected {self.config.input_channels} stacked channels, "
                f"got {fundus.shape[3]}+{angio.shape[3]}"
            )

    def forward(self, fundus, angio, training=False):
        self._check(fundus, angio)
        self._split = fundus.shape[3]
        x = np.concatenate([fundus, angio], axis=3)
        return self.body.forward(x, training)

    def backward(self, gmap, accum=True):
        """Returns (grad wrt fundus, grad wrt angiogram)."""
        gx = self.body.backward(gmap, accum)
        return gx[..., : self._split], gx[..., self._split :]


class DiscriminatorBank:
    """The four discriminators, keyed by name."""

    def __init__(self, configs=None, seed=0, dtype=np.float32):
        configs = configs or default_discriminator_configs()
        missing = set(DISCRIMINATOR_NAMES) - set(configs)
        if missing:
            raise ConfigError(f"missing discriminator configs: {sorted(missing)}")
        entropy = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        seeds = entropy.spawn(len(DISCRIMINATOR_NAMES))
        self.members = {
            name: PatchDiscriminator(configs[name], seeds[i], dtype)
            for i, name in enumerate(DISCRIMINATOR_NAMES)
        }

    def __getitem__(self, name) -> PatchDiscriminator:
        return self.members[name]

    def group(self, which):
        return [self.members[n] for n in GROUPS[which]]

    def items(self):
        return [(n, self.members[n]) for n in DISCRIMINATOR_NAMES]


def multi_scale_judge(bank: DiscriminatorBank, fundus_pyramid: ImagePyramid,
                      angio_pyramid: ImagePyramid, training=False):
    """Judge an aligned pyramid pair with all four discriminators.

    Returns {name: patch map}; d1_fine sees level 0, d2_fine and d1_coarse
    level 1, d2_coarse level 2.
    """
    for fl, al in zip(fundus_pyramid.levels, angio_pyramid.levels):
        if fl.shape[:-1] != al.shape[:-1]:
            raise InputError(
                f"pyramid level mismatch: {fl.shape} vs {al.shape}"
            )
    out = {}
    for name in DISCRIMINATOR_NAMES:
        level = LEVEL_ASSIGNMENT[name]
        out[name] = bank[name].forward(
            fundus_pyramid.levels[level], angio_pyramid.levels[level], training
        )
    return out


def receptive_field(config: DiscriminatorConfig, pyramid_level=0) -> int:
    """Effective receptive field in original-image pixels, computed from
    the kernel/stride plan."""
    rf, jump = 1, 1
    for _ in range(config.encoder_blocks):
        rf += (config.kernel - 1) * jump
        jump *= 2
    rf += (config.patch_kernel - 1) * jump
    return rf * (2 ** pyramid_level)
