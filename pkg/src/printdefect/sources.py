"""Procedural source pages for demos, fixtures, and model fitting."""
from __future__ import annotations

import numpy as np

from .noise import PerlinField, perlin2d


def diverse_image(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Independent uniform RGB per pixel; maximizes color diversity for fitting."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(height, width, 3))


def photo_like(width: int, height: int, seed: int = 0, lo: float = 0.35, hi: float = 0.95) -> np.ndarray:
    """Smooth multi-octave color clouds with a few flat color blocks.

    Every pixel has its brightest channel at or above ``lo`` so injected
    defects of small amplitude remain measurable.
    """
    rng = np.random.default_rng(seed)
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    cell = max(width, height) / 5.0
    img = np.empty((height, width, 3))
    for ch in range(3):
        f = PerlinField(int(rng.integers(0, 2**62)), cell, 4, 0.55)
        n = perlin2d(f, xs + rng.uniform(0, 97), ys + rng.uniform(0, 97))
        img[..., ch] = 0.5 + 0.45 * n
    for _ in range(int(rng.integers(2, 5))):
        bw = int(rng.integers(width // 10, width // 3 + 1))
        bh = int(rng.integers(height // 10, height // 3 + 1))
        x0 = int(rng.integers(0, width - bw + 1))
        y0 = int(rng.integers(0, height - bh + 1))
        img[y0:y0 + bh, x0:x0 + bw] = rng.uniform(0.2, 0.9, size=3)
    img = np.clip(img, 0.0, 1.0)
    # Rescale brightness so max channel lies in [lo, hi] without changing hue much.
    peak = img.max(axis=2, keepdims=True)
    target = lo + (hi - lo) * peak
    scale = np.divide(target, peak, out=np.ones_like(peak), where=peak > 0)
    return np.clip(img * scale, 0.0, 1.0)
