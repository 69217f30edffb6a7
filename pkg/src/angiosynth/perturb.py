"""Deterministic fundus perturbations: blur, sharpen, noise (global
changes) and whirl, pinch (structural distortions).

Closed forms (amount = 0 is the exact identity for every kind):

  blur     Gaussian, sigma = amount pixels, kernel truncated at 3*sigma,
           normalized, edge-clamped borders
  sharpen  unsharp mask: out = in + amount * (in - blur(in, sigma=2))
  noise    additive Gaussian, std = amount in normalized units, seeded
  whirl    inverse mapping inside the disk of radius
           radius_fraction * R_max: source angle = angle - amount*(1-d)^2
           where d = r / (radius_fraction * R_max) <= 1; bilinear sampling
  pinch    inverse mapping: source radius = r * d**amount,
           amount in (-0.9, 0.9); bilinear sampling

R_max is half the shorter image side; the disk is centered on the image
center; pixels outside the disk are copied bit-exactly. Outputs are
clamped to [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("none", "blur", "sharpen", "noise", "whirl", "pinch")

DEFAULT_AMOUNTS = {
    "none": 0.0,
    "blur": 2.0,
    "sharpen": 1.0,
    "noise": 0.05,
    "whirl": 1.5,
    "pinch": 0.5,
}

SHARPEN_BASE_SIGMA = 2.0


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    amount: float = None
    radius_fraction: float = 1.0   # whirl/pinch only
    seed: int = 0                  # noise only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.amount is None:
            object.__setattr__(self, "amount", DEFAULT_AMOUNTS[self.kind])
        if not 0.0 < self.radius_fraction <= 1.0:
            raise ConfigError(
                f"radius_fraction must be in (0, 1], got {self.radius_fraction}"
            )
        if self.kind == "pinch" and not -0.9 < self.amount < 0.9:
            raise ConfigError(
                f"pinch amount must be in (-0.9, 0.9), got {self.amount}"
            )

    def to_dict(self):
        return {
            "kind": self.kind,
            "amount": self.amount,
            "radius_fraction": self.radius_fraction,
            "seed": self.seed,
        }


def default_condition_specs():
    """The six evaluation conditions in report order."""
    return {
        "none": PerturbationSpec("none"),
        "noise": PerturbationSpec("noise"),
        "blur": PerturbationSpec("blur"),
        "sharp": PerturbationSpec("sharpen"),
        "whirl": PerturbationSpec("whirl"),
        "pinch": PerturbationSpec("pinch"),
    }


def gaussian_taps(sigma):
    radius = max(1, math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(image, sigma):
    """Separable Gaussian with edge-clamped borders; HWC array in, out."""
    w = gaussian_taps(sigma).astype(image.dtype)
    radius = len(w) // 2
    padded = np.pad(image, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    rows = np.zeros_like(image, dtype=image.dtype)
    for i, wi in enumerate(w):
        rows += wi * padded[i : i + image.shape[0]]
    padded = np.pad(rows, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(image, dtype=image.dtype)
    for i, wi in enumerate(w):
        out += wi * padded[:, i : i + image.shape[1]]
    return out


def _bilinear_sample(image, ys, xs):
    """Sample image (H,W,C) at float coords, edge-clamped."""
    h, w = image.shape[:2]
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[..., None]
    fx = np.clip(xs - x0, 0.0, 1.0)[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _radial_grid(shape, radius_fraction):
    h, w = shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = ys - cy, xs - cx
    r = np.hypot(dy, dx)
    r_disk = radius_fraction * (min(h, w) / 2.0)
    return cy, cx, dy, dx, r, r_disk


def _whirl(image, amount, radius_fraction):
    cy, cx, dy, dx, r, r_disk = _radial_grid(image.shape, radius_fraction)
    inside = r <= r_disk
    d = np.where(inside, r / r_disk, 0.0)
    theta = np.arctan2(dy, dx)
    theta_src = theta - amount * (1.0 - d) ** 2
    ys = cy + r * np.sin(theta_src)
    xs = cx + r * np.cos(theta_src)
    out = image.copy()
    sampled = _bilinear_sample(image, ys[inside], xs[inside])
    out[inside] = np.clip(sampled, -1.0, 1.0)
    return out


def _pinch(image, amount, radius_fraction):
    cy, cx, dy, dx, r, r_disk = _radial_grid(image.shape, radius_fraction)
    inside = (r <= r_disk) & (r > 0)
    d = np.where(inside, r / r_disk, 1.0)
    scale = d ** amount  # source radius = r * d^amount
    ys = cy + dy * scale
    xs = cx + dx * scale
    out = image.copy()
    sampled = _bilinear_sample(image, ys[inside], xs[inside])
    out[inside] = np.clip(sampled, -1.0, 1.0)
    return out


def apply_perturbation(image, spec: PerturbationSpec):
    """Pure function of (image, spec); image is HWC in [-1, 1]."""
    if spec.kind not in KINDS:
        raise ConfigError(f"unknown perturbation kind {spec.kind!r}")
    if spec.kind == "none" or spec.amount == 0:
        return image.copy()
    if spec.kind == "blur":
        return np.clip(gaussian_blur(image, spec.amount), -1.0, 1.0)
    if spec.kind == "sharpen":
        soft = gaussian_blur(image, SHARPEN_BASE_SIGMA)
        return np.clip(image + spec.amount * (image - soft), -1.0, 1.0)
    if spec.kind == "noise":
        rng = np.random.default_rng(spec.seed)
        noise = rng.normal(0.0, spec.amount, image.shape).astype(image.dtype)
        return np.clip(image + noise, -1.0, 1.0)
    if spec.kind == "whirl":
        return _whirl(image, spec.amount, spec.radius_fraction)
    return _pinch(image, spec.amount, spec.radius_fraction)
