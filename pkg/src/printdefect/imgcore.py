"""Raster primitives: color conversion, resampling, normalization, tiling.

Images are ``float64`` numpy arrays of shape ``(height, width, channels)`` with
values in ``[0, 1]``. Label masks are ``uint8`` arrays of shape
``(height, width)``. Conversion to 8 bit happens only in :mod:`printdefect.imgio`.
"""
from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from .errors import DimMismatch, RegionOutOfBounds

EPS_STD = 1e-8
CUBIC_A = -0.5


class ClassScheme(enum.Enum):
    """Label vocabulary. ``MULTI`` keeps one banding label per colorant."""

    MULTI = "multi"
    COLLAPSED = "collapsed"

    @property
    def num_classes(self) -> int:
        return 6 if self is ClassScheme.MULTI else 3

    @property
    def names(self) -> tuple[str, ...]:
        if self is ClassScheme.MULTI:
            return ("background", "streak", "banding_c", "banding_m", "banding_y", "banding_k")
        return ("background", "streak", "banding")

    def banding_label(self, channel: int) -> int:
        """Label for banding on CMYK channel index ``channel`` (0=C .. 3=K)."""
        if not 0 <= channel < 4:
            raise ValueError(f"CMYK channel index must be in 0..3, got {channel}")
        return 2 + channel if self is ClassScheme.MULTI else 2

    def is_banding(self, label) -> np.ndarray | bool:
        return np.asarray(label) >= 2

    def collapse(self, mask: np.ndarray) -> np.ndarray:
        """Map a mask in this scheme onto the collapsed scheme."""
        if self is ClassScheme.COLLAPSED:
            return mask.copy()
        return np.minimum(mask, 2).astype(np.uint8)

    @classmethod
    def parse(cls, value: "ClassScheme | str") -> "ClassScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown class scheme {value!r}; expected 'multi' or 'collapsed'") from None


STREAK_LABEL = 1
BACKGROUND_LABEL = 0


class Rect(NamedTuple):
    x: int
    y: int
    w: int
    h: int

    def slices(self) -> tuple[slice, slice]:
        """Row/column slices for indexing an ``(H, W, ...)`` array."""
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def fits(self, width: int, height: int) -> bool:
        return (
            self.w >= 1 and self.h >= 1 and self.x >= 0 and self.y >= 0
            and self.x + self.w <= width and self.y + self.h <= height
        )

    def check(self, width: int, height: int) -> "Rect":
        if not self.fits(width, height):
            raise RegionOutOfBounds(f"{self} does not fit in a {width}x{height} image")
        return self


def as_image(img, channels: int | None = 3) -> np.ndarray:
    """Validate and return ``img`` as a float64 ``(H, W, C)`` array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimMismatch(f"expected an (H, W, C) raster, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise DimMismatch(f"expected {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("raster contains non-finite values")
    return arr


def rgb_to_cmyk(img) -> np.ndarray:
    """Naive device-independent RGB to CMYK (no ICC profile, full gray replacement)."""
    rgb = as_image(img, 3)
    k = 1.0 - rgb.max(axis=2)
    denom = 1.0 - k
    out = np.zeros(rgb.shape[:2] + (4,))
    ink = denom > 0
    safe = np.where(ink, denom, 1.0)
    for ch in range(3):
        out[..., ch] = np.where(ink, (1.0 - rgb[..., ch] - k) / safe, 0.0)
    out[..., 3] = k
    return np.clip(out, 0.0, 1.0)


def cmyk_to_rgb(img) -> np.ndarray:
    cmyk = as_image(img, 4)
    white = 1.0 - cmyk[..., 3:4]
    return (1.0 - cmyk[..., :3]) * white


def _cubic(t: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def cubic_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Source indices ``(n_out, 4)`` and weights for center-aligned cubic sampling.

    Indices are clamped to the edge. The weights sum to one in exact arithmetic.
    """
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(pos).astype(np.int64)
    offsets = np.arange(-1, 3)
    idx = base[:, None] + offsets[None, :]
    weights = _cubic(pos[:, None] - idx)
    return np.clip(idx, 0, n_in - 1), weights


def _resample_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = arr.shape[axis]
    if n_in == n_out:
        return arr
    idx, weights = cubic_taps(n_in, n_out)
    moved = np.moveaxis(arr, axis, 0)
    # Expand around the second tap (the floor sample) so constant rows stay exact.
    anchor = moved[idx[:, 1]]
    acc = anchor.copy()
    for k in (0, 2, 3):
        wk = weights[:, k].reshape((-1,) + (1,) * (moved.ndim - 1))
        acc += wk * (moved[idx[:, k]] - anchor)
    return np.moveaxis(acc, 0, axis)


def resize_bicubic(img, out_w: int, out_h: int, clamp: bool = True) -> np.ndarray:
    """Separable cubic resampling (a = -0.5, clamp-to-edge) of any channel count.

    No antialiasing prefilter is applied when downscaling.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    arr = as_image(img, None)
    out = _resample_axis(arr, out_h, 0)
    out = _resample_axis(out, out_w, 1)
    if out is arr:
        out = arr.copy()
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Center-aligned nearest source index for each of ``n_out`` samples."""
    return np.minimum((2 * np.arange(n_out) + 1) * n_in // (2 * n_out), n_in - 1)


def resize_nearest(mask, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbor resize for labels (or any array indexed ``[row, col, ...]``)."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    arr = np.asarray(mask)
    rows = nearest_indices(arr.shape[0], out_h)
    cols = nearest_indices(arr.shape[1], out_w)
    return arr[rows[:, None], cols[None, :]].copy()


class Normalized(NamedTuple):
    data: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    constant_channels: tuple[int, ...]

    @property
    def constant(self) -> bool:
        return bool(self.constant_channels)


def normalize(img, eps: float = EPS_STD) -> Normalized:
    """Per-channel z-score.

    Channels whose standard deviation falls below ``eps`` are divided by ``eps``
    and reported in ``constant_channels``.
    """
    arr = as_image(img, None)
    mean = arr.mean(axis=(0, 1))
    std = arr.std(axis=(0, 1))
    flat = std < eps
    divisor = np.where(flat, eps, std)
    data = (arr - mean) / divisor
    return Normalized(data, mean, std, tuple(int(c) for c in np.flatnonzero(flat)))


def _axis_starts(n: int, patch: int) -> list[tuple[int, int]]:
    if n <= patch:
        return [(0, n)]
    starts = list(range(0, n - patch + 1, patch))
    if starts[-1] + patch < n:
        starts.append(n - patch)
    return [(s, patch) for s in starts]


def patch_grid(w: int, h: int, patch: int) -> list[Rect]:
    """Non-overlapping tiles with the last tile on each axis flush to the edge.

    Rects are ordered row-major (top to bottom, then left to right).
    """
    if w < 1 or h < 1 or patch < 1:
        raise ValueError("image size and patch size must be positive")
    xs = _axis_starts(w, patch)
    ys = _axis_starts(h, patch)
    return [Rect(x, y, pw, ph) for (y, ph) in ys for (x, pw) in xs]
