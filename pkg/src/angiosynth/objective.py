"""Least-squares adversarial losses, L2 reconstruction, and the combined
lambda-weighted objective.

Targets follow the sigmoid-compatible least-squares scheme: the
discriminator pushes real patches toward real_target (1) and fakes toward
fake_target_d (0); the generator pushes its fakes toward fake_target_g
(1). All reductions are means over patch entries and batch, so loss
magnitudes are comparable across the four patch-map resolutions. The
targets are config fields, so a (-1, 1) coding remains expressible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

TRAINING_LOG_COLUMNS = (
    "cycle", "d_fine_loss", "d_coarse_loss", "g_fine_adv", "g_coarse_adv",
    "l2_fine", "l2_coarse", "total",
)


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_weight: float = 10.0
    real_target: float = 1.0
    fake_target_d: float = 0.0
    fake_target_g: float = 1.0

    def __post_init__(self):
        if self.lambda_weight < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_weight}")


def _as_list(maps):
    return maps if isinstance(maps, (list, tuple)) else [maps]


def squared_error_to_target(patch_map, target):
    """(value, grad) of mean((map - target)^2)."""
    diff = patch_map - target
    value = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return value, grad


def lsgan_d_loss(real_maps, fake_maps, config: ObjectiveConfig) -> float:
    """Discriminator loss over one group: sum over its members of
    mean((D_real - real_target)^2) + mean((D_fake - fake_target_d)^2)."""
    total = 0.0
    for m in _as_list(real_maps):
        total += squared_error_to_target(m, config.real_target)[0]
    for m in _as_list(fake_maps):
        total += squared_error_to_target(m, config.fake_target_d)[0]
    return total


def lsgan_g_loss(fake_maps, config: ObjectiveConfig) -> float:
    """Generator-side adversarial loss: sum over the paired group of
    mean((D_fake - fake_target_g)^2)."""
    total = 0.0
    for m in _as_list(fake_maps):
        total += squared_error_to_target(m, config.fake_target_g)[0]
    return total


def recon_l2(generated, real) -> float:
    """Mean squared difference over all pixels and channels."""
    if generated.shape != real.shape:
        raise InputError(
            f"shape mismatch: {generated.shape} vs {real.shape}"
        )
    diff = generated - real
    return float(np.mean(diff * diff))


def recon_l2_grad(generated, real):
    if generated.shape != real.shape:
        raise InputError(
            f"shape mismatch: {generated.shape} vs {real.shape}"
        )
    return (2.0 / generated.size) * (generated - real)


def total_generator_objective(adv_fine, adv_coarse, l2_fine, l2_coarse,
                              config: ObjectiveConfig) -> float:
    return adv_fine + adv_coarse + config.lambda_weight * (l2_fine + l2_coarse)
