"""Lanczos resampling and the three-scale image pyramid.

This module is the single source of truth for every resize in the
pipeline: the discriminator pyramid, the half-resolution input of the
coarse generator, and the embedder's thumbnail all route through
lanczos_resize.

Convention: output pixel i samples source coordinate (i + 0.5) * scale
- 0.5 (pixel centers aligned), weighted by the radius-3 Lanczos kernel
stretched by the scale factor when downsampling, edge-clamped at the
borders, and normalized per output pixel so constants are preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError

LANCZOS_RADIUS = 3


def lanczos_kernel(x, a=LANCZOS_RADIUS):
    x = np.asarray(x, dtype=np.float64)
    out = np.sinc(x) * np.sinc(x / a)
    return np.where(np.abs(x) < a, out, 0.0)


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int, a: int = LANCZOS_RADIUS):
    """Row-normalized (n_out, n_in) resampling matrix along one axis."""
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    support = a * stretch
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = math.ceil(center - support)
        hi = math.floor(center + support)
        taps = np.arange(lo, hi + 1)
        w = lanczos_kernel((taps - center) / stretch, a)
        w /= w.sum()
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), w)
    m.setflags(write=False)
    return m


def _apply_axis(mat, x, axis):
    y = np.tensordot(mat.astype(x.dtype), x, axes=(1, axis))
    return np.moveaxis(y, 0, axis)


def lanczos_resize(image, out_hw):
    """Resize (H,W,C) or (N,H,W,C) to out_hw=(H2,W2)."""
    batched = image.ndim == 4
    if not batched and image.ndim != 3:
        raise InputError(f"expected HWC or NHWC array, got shape {image.shape}")
    axis_h = 1 if batched else 0
    h, w = image.shape[axis_h : axis_h + 2]
    mh = resize_matrix(h, out_hw[0])
    mw = resize_matrix(w, out_hw[1])
    out = _apply_axis(mh, image, axis_h)
    return _apply_axis(mw, out, axis_h + 1)


def lanczos_resize_adjoint(grad, in_hw):
    """Transpose of lanczos_resize as a linear map (for backprop)."""
    batched = grad.ndim == 4
    axis_h = 1 if batched else 0
    oh, ow = grad.shape[axis_h : axis_h + 2]
    mh = resize_matrix(in_hw[0], oh)
    mw = resize_matrix(in_hw[1], ow)
    out = _apply_axis(mh.T.copy(), grad, axis_h)
    return _apply_axis(mw.T.copy(), out, axis_h + 1)


def downsample2(image):
    batched = image.ndim == 4
    axis_h = 1 if batched else 0
    h, w = image.shape[axis_h : axis_h + 2]
    if h % 2 or w % 2:
        raise InputError(f"dims must be even to halve, got {h}x{w}")
    return lanczos_resize(image, (h // 2, w // 2))


@dataclass(frozen=True)
class ImagePyramid:
    """Three scales of one image: [original, 2x down, 4x down].

    The 4x level is produced by halving the 2x level, so halving level k
    reproduces level k+1 exactly.
    """

    levels: tuple

    def __post_init__(self):
        if len(self.levels) != 3:
            raise InputError(f"pyramid must have 3 levels, got {len(self.levels)}")


def build_pyramid(image) -> ImagePyramid:
    axis_h = 1 if image.ndim == 4 else 0
    h, w = image.shape[axis_h : axis_h + 2]
    if h % 4 or w % 4:
        raise InputError(f"image dims must be divisible by 4, got {h}x{w}")
    half = downsample2(image)
    quarter = downsample2(half)
    return ImagePyramid(levels=(image, half, quarter))
