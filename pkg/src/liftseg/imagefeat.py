"""2D feature-map operations.

Covers the image-side preprocessing chain: quality filtering of instance
masks, Gaussian softening of binary masks, bilinear resampling (align-
corners-false convention), dense upsampling of token grids, and
mask-weighted token pooling.

The Gaussian soften is a separable convolution with replicate padding,
normalized by convolving an all-ones field with the same kernel; this
keeps constant masks exactly constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMaskError, ShapeError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-pixel features, H x W x D."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] < 1:
            raise ShapeError(f"feature map must be (H, W, D), got {v.shape}")
        if not np.isfinite(v).all():
            raise ConfigError("feature map values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class TokenGrid:
    """Spatial feature tokens arranged on their G_h x G_w grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"token grid must be (G_h, G_w, D), got {v.shape}")
        if not np.isfinite(v).all():
            raise ConfigError("token grid values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


@dataclass(frozen=True)
class InstanceMask:
    """Binary mask plus its predicted IoU and stability quality scores."""

    mask: np.ndarray
    pred_iou: float
    stability: float

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ShapeError(f"mask must be 2D, got {m.shape}")
        m = m.astype(np.uint8)
        if not np.isin(m, (0, 1)).all():
            raise ConfigError("mask entries must be 0 or 1")
        if m.sum() == 0:
            raise ConfigError("mask must have at least one active pixel")
        if not (0.0 <= self.pred_iou <= 1.0 and 0.0 <= self.stability <= 1.0):
            raise ConfigError("quality scores must lie in [0, 1]")
        object.__setattr__(self, "mask", _freeze(m))
        object.__setattr__(self, "pred_iou", float(self.pred_iou))
        object.__setattr__(self, "stability", float(self.stability))


@dataclass(frozen=True)
class SoftMask:
    """Continuous pooling weights in [0, 1]."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"soft mask must be 2D, got {w.shape}")
        if w.min() < 0.0 or w.max() > 1.0:
            raise ConfigError("soft mask weights must lie in [0, 1]")
        object.__setattr__(self, "weights", _freeze(w))


def filter_masks(masks: list[InstanceMask], theta_iou: float = 0.8,
                 theta_stab: float = 0.9) -> list[InstanceMask]:
    """Keep masks whose both quality scores clear their thresholds."""
    if not (0.0 <= theta_iou <= 1.0 and 0.0 <= theta_stab <= 1.0):
        raise ConfigError("thresholds must lie in [0, 1]")
    return [m for m in masks
            if m.pred_iou >= theta_iou and m.stability >= theta_stab]


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps with radius ceil(3 * sigma)."""
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _convolve_axis(field: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(field, pad, mode="edge")
    out = np.zeros_like(field)
    n = field.shape[axis]
    for i, tap in enumerate(kernel):
        if axis == 0:
            out += tap * padded[i:i + n, :]
        else:
            out += tap * padded[:, i:i + n]
    return out


def gaussian_soften(mask: InstanceMask, sigma: float = 2.0) -> SoftMask:
    """Blur a binary mask into continuous weights (separable Gaussian).

    Replicate padding; the result is divided by the blur of an all-ones
    field so constant masks survive exactly, then clamped to [0, 1].
    """
    kernel = gaussian_kernel_1d(sigma)
    field = mask.mask.astype(np.float64)
    num = _convolve_axis(_convolve_axis(field, kernel, 0), kernel, 1)
    den = _convolve_axis(_convolve_axis(np.ones_like(field), kernel, 0), kernel, 1)
    return SoftMask(weights=np.clip(num / den, 0.0, 1.0))


def bilinear_resize(grid, out_h: int, out_w: int):
    """Resample to (out_h, out_w) with the align-corners-false convention.

    Source coordinate = (dst + 0.5) * (in / out) - 0.5, clamped to the
    valid range (edge clamp).  Accepts (H, W) or (H, W, D) arrays or a
    SoftMask (returned as a SoftMask).  Channels resample independently.
    """
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output shape must be >= 1, got ({out_h}, {out_w})")
    if isinstance(grid, SoftMask):
        return SoftMask(weights=bilinear_resize(grid.weights, out_h, out_w))
    values = np.asarray(grid, dtype=np.float64)
    if values.ndim not in (2, 3):
        raise ShapeError(f"grid must be (H, W) or (H, W, D), got {values.shape}")
    in_h, in_w = values.shape[0], values.shape[1]

    def _axis_coords(n_in: int, n_out: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = _axis_coords(in_h, out_h)
    x0, x1, fx = _axis_coords(in_w, out_w)
    fy = fy.reshape(-1, *([1] * (values.ndim - 1)))
    fx = fx.reshape(1, -1, *([1] * (values.ndim - 2)))
    rows0 = values[y0]
    rows = rows0 + fy * (values[y1] - rows0)
    left = rows[:, x0]
    return left + fx * (rows[:, x1] - left)


def upsample_features(tokens: TokenGrid, out_h: int, out_w: int) -> FeatureMap:
    """Bilinearly upsample a token grid into a dense per-pixel feature map."""
    return FeatureMap(values=bilinear_resize(tokens.values, out_h, out_w))


def masked_pool(tokens: TokenGrid, soft: SoftMask) -> np.ndarray:
    """Weighted mean of tokens under a soft mask: sum(w * f) / sum(w).

    Raises DegenerateMaskError when the total weight is <= 1e-8, which
    signals an instance whose mask carries no usable support.
    """
    gh, gw = tokens.grid_shape
    if soft.weights.shape != (gh, gw):
        raise ShapeError(
            f"soft mask shape {soft.weights.shape} does not match token grid ({gh}, {gw})")
    total = float(soft.weights.sum())
    if total <= 1e-8:
        raise DegenerateMaskError(f"total mask weight {total} is degenerate")
    weighted = np.tensordot(soft.weights, tokens.values, axes=([0, 1], [0, 1]))
    return weighted / total
