"""Seedable 2D gradient noise and the dark-streak texture built on it."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

_SQRT2 = np.sqrt(2.0)
_ANGLES = np.arange(8) * (np.pi / 4.0)
# Eight unit gradients; with unit gradients the 2D noise peak is sqrt(2)/2.
_GRAD = np.stack([np.cos(_ANGLES), np.sin(_ANGLES)], axis=1)
_GRAD[np.abs(_GRAD) < 1e-15] = 0.0


def permutation_table(seed: int) -> np.ndarray:
    """256-entry permutation shuffled by numpy's PCG64 generator seeded with ``seed``.

    Negative seeds are reduced modulo 2**64.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))
    return rng.permutation(256).astype(np.int64)


@dataclass(frozen=True)
class PerlinField:
    seed: int = 0
    cell_size: float = 8.0
    octaves: int = 2
    persistence: float = 0.5
    _perm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if not 0.0 < self.persistence <= 1.0:
            raise ValueError("persistence must be in (0, 1]")
        object.__setattr__(self, "_perm", permutation_table(self.seed))


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _octave(perm: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Single octave in lattice coordinates, scaled to [-1, 1]."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    xi = x0.astype(np.int64) & 255
    yi = y0.astype(np.int64) & 255

    def corner(dx, dy):
        h = perm[(perm[(xi + dx) & 255] + yi + dy) & 255] & 7
        g = _GRAD[h]
        return g[..., 0] * (fx - dx) + g[..., 1] * (fy - dy)

    u = _fade(fx)
    v = _fade(fy)
    bottom = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    top = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return np.clip((bottom + v * (top - bottom)) * _SQRT2, -1.0, 1.0)


def perlin2d(field: PerlinField, x, y):
    """Evaluate gradient noise at pixel coordinates ``(x, y)``.

    Octave ``i`` runs at frequency ``2**i / cell_size`` with weight
    ``persistence**i``; the sum is divided by the total weight so the result
    stays in [-1, 1]. Accepts scalars or broadcastable arrays.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    xa, ya = np.broadcast_arrays(xa, ya)
    total = np.zeros(xa.shape)
    weight_sum = 0.0
    freq = 1.0 / field.cell_size
    amp = 1.0
    for _ in range(field.octaves):
        total += amp * _octave(field._perm, xa * freq, ya * freq)
        weight_sum += amp
        amp *= field.persistence
        freq *= 2.0
    out = total / weight_sum
    if out.ndim == 0:
        return float(out)
    return out


def perlin_grid(field: PerlinField, width: int, height: int, workers: int = 1) -> np.ndarray:
    """Noise sampled at integer pixel positions, shape ``(height, width)``.

    Rows are split into contiguous chunks for ``workers`` threads; each value is
    computed independently so the result does not depend on ``workers``.
    """
    xs = np.arange(width, dtype=np.float64)
    bounds = np.linspace(0, height, max(1, workers) + 1).astype(int)

    def chunk(i):
        ys = np.arange(bounds[i], bounds[i + 1], dtype=np.float64)
        return perlin2d(field, xs[None, :], ys[:, None])

    if workers <= 1:
        return chunk(0)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(chunk, range(workers)))
    return np.vstack(parts)


@dataclass(frozen=True)
class StreakParams:
    """Texture controls for dark streaks.

    ``kappa`` scales the noise modulation along the streak; ``edge_floor`` is
    the darkness at the streak edges relative to the centerline peak.
    """

    kappa: float = 0.4
    edge_floor: float = 0.4
    cell_size: float = 8.0
    octaves: int = 2
    persistence: float = 0.5

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0.0 <= self.edge_floor < 1.0:
            raise ValueError("edge_floor must be in [0, 1)")


def cross_profile(width: int, peak: float = 1.0, edge_floor: float = 0.4) -> np.ndarray:
    """Raised-cosine darkness across the streak, maximal at the centerline."""
    v = np.arange(width, dtype=np.float64)
    bump = np.sin(np.pi * (v + 0.5) / width) ** 2
    return peak * (edge_floor + (1.0 - edge_floor) * bump)


def streak_texture(length: int, width: int, seed: int, params: StreakParams | None = None,
                   peak: float = 1.0) -> np.ndarray:
    """Darkness field for one streak, shape ``(width, length)``.

    Row ``v`` runs across the streak, column ``u`` along it. Modulation depends
    on ``u`` only, so each row is a scaled copy of the same noise trace and
    every edge row is lighter than the centerline row.
    """
    if length < 1 or width < 1:
        raise ValueError("streak length and width must be >= 1")
    params = params or StreakParams()
    base = cross_profile(width, peak, params.edge_floor)
    if params.kappa == 0:
        return np.repeat(base[:, None], length, axis=1).clip(0.0, 1.0)
    field = PerlinField(seed, params.cell_size, params.octaves, params.persistence)
    u = np.arange(length, dtype=np.float64)
    # Off-lattice row so the trace does not pass through the zero lines.
    modulation = perlin2d(field, u, np.full(length, 0.5 * params.cell_size + 0.25))
    return np.clip(base[:, None] * (1.0 + params.kappa * modulation[None, :]), 0.0, 1.0)
