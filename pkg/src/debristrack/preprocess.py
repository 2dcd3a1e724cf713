"""ZScale contrast stretch from raw sky intensities to the 8-bit range."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# value emitted for every pixel when the image has zero spread
DEGENERATE_LEVEL = 127.0


@dataclass(frozen=True)
class ZScaleParams:
    k: float = 2.5

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")


@dataclass(frozen=True)
class ZScaleBounds:
    z1: float
    z2: float

    def __post_init__(self):
        if self.z1 > self.z2:
            raise ValueError(f"z1={self.z1} > z2={self.z2}")


def zscale_bounds(image, params: ZScaleParams = ZScaleParams()) -> ZScaleBounds:
    """``median -/+ k * std`` over every pixel (population std, no clipping)."""
    arr = np.asarray(image, dtype=float)
    if arr.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    median = float(np.median(arr))
    std = float(np.std(arr))
    return ZScaleBounds(median - params.k * std, median + params.k * std)


def zscale_apply(image, bounds: ZScaleBounds) -> np.ndarray:
    arr = np.asarray(image, dtype=float)
    if bounds.z1 == bounds.z2:
        return np.full(arr.shape, DEGENERATE_LEVEL)
    scaled = 255.0 * (arr - bounds.z1) / (bounds.z2 - bounds.z1)
    return np.clip(scaled, 0.0, 255.0)


def zscale(image, params: ZScaleParams = ZScaleParams()) -> np.ndarray:
    return zscale_apply(image, zscale_bounds(image, params))
