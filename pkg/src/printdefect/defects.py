"""Dark-streak and color-banding injection with exact ground-truth masks."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import RegionOutOfBounds
from .imgcore import STREAK_LABEL, ClassScheme, Rect, as_image, cmyk_to_rgb, rgb_to_cmyk
from .noise import StreakParams, streak_texture

CMYK_NAMES = ("C", "M", "Y", "K")


class DefectKind(str, enum.Enum):
    STREAK = "streak"
    BANDING = "banding"


class Orientation(str, enum.Enum):
    """Direction the defect runs along. Horizontal defects span columns."""

    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


class Sign(str, enum.Enum):
    EXCESS = "excess"
    LACK = "lack"

    @property
    def factor(self) -> float:
        return 1.0 if self is Sign.EXCESS else -1.0


@dataclass(frozen=True)
class BandProfile:
    mu1: float
    mu2: float
    sigma: float
    amplitude: float

    def to_dict(self) -> dict:
        return {"mu1": self.mu1, "mu2": self.mu2, "sigma": self.sigma, "amplitude": self.amplitude}

    @classmethod
    def from_dict(cls, d: dict) -> "BandProfile":
        return cls(float(d["mu1"]), float(d["mu2"]), float(d["sigma"]), float(d["amplitude"]))


def banding_profile(width: int, p: BandProfile) -> np.ndarray:
    """Bimodal Gaussian weights across a band of ``width`` pixels.

    The two lobes are unnormalized Gaussians at ``mu1`` and ``mu2``; the sum is
    rescaled so its maximum over the band equals ``p.amplitude``.

    >>> banding_profile(3, BandProfile(0.5, 1.5, 1.0, 0.2)).round(4).tolist()
    [0.1368, 0.2, 0.1368]
    """
    if width < 1:
        raise ValueError("band width must be >= 1")
    if not p.sigma > 0:
        raise ValueError("sigma must be positive")
    if abs(p.mu1 + p.mu2 - (width - 1)) > 1e-9:
        raise ValueError(f"lobes must be symmetric: mu1 + mu2 = {p.mu1 + p.mu2}, expected {width - 1}")
    if p.amplitude == 0:
        return np.zeros(width)
    v = np.arange(width, dtype=np.float64)
    # Distances are symmetrized so w(v) == w(width-1-v) holds bit-exactly.
    d1 = np.minimum(np.abs(v - p.mu1), np.abs((width - 1 - v) - p.mu2))
    d2 = np.minimum(np.abs(v - p.mu2), np.abs((width - 1 - v) - p.mu1))
    lobes = 0.5 * (np.exp(-0.5 * (d1 / p.sigma) ** 2) + np.exp(-0.5 * (d2 / p.sigma) ** 2))
    peak = lobes.max()
    if peak <= 0:
        return np.zeros(width)
    return p.amplitude * lobes / peak


@dataclass(frozen=True)
class DefectSpec:
    """One injected defect.

    ``amplitude`` is the peak darkness for streaks and the peak ink change for
    banding. ``channel`` indexes CMYK (0=C .. 3=K) and is set only for banding.
    """

    kind: DefectKind
    orientation: Orientation
    region: Rect
    amplitude: float
    channel: int | None = None
    sign: Sign | None = None
    profile: BandProfile | None = None
    texture_seed: int = 0
    streak_color: float = 0.1
    texture: StreakParams = field(default_factory=StreakParams)

    def __post_init__(self):
        object.__setattr__(self, "kind", DefectKind(self.kind))
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        object.__setattr__(self, "region", Rect(*self.region))
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude must be in [0, 1], got {self.amplitude}")
        if self.kind is DefectKind.BANDING:
            if self.channel not in (0, 1, 2, 3):
                raise ValueError("banding needs a CMYK channel index in 0..3")
            if self.sign is None or self.profile is None:
                raise ValueError("banding needs a sign and a profile")
            object.__setattr__(self, "sign", Sign(self.sign))
            if abs(self.profile.amplitude - self.amplitude) > 1e-12:
                raise ValueError("profile amplitude must match the defect amplitude")

    @property
    def cross_width(self) -> int:
        """Extent across the defect (rows for horizontal defects)."""
        return self.region.h if self.orientation is Orientation.HORIZONTAL else self.region.w

    @property
    def length(self) -> int:
        return self.region.w if self.orientation is Orientation.HORIZONTAL else self.region.h

    def label(self, scheme: ClassScheme) -> int:
        if self.kind is DefectKind.STREAK:
            return STREAK_LABEL
        return scheme.banding_label(self.channel)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "orientation": self.orientation.value,
            "region": list(self.region),
            "amplitude": self.amplitude,
        }
        if self.kind is DefectKind.BANDING:
            d.update(channel=CMYK_NAMES[self.channel], sign=self.sign.value, profile=self.profile.to_dict())
        else:
            t = self.texture
            d.update(
                texture_seed=self.texture_seed,
                streak_color=self.streak_color,
                texture={"kappa": t.kappa, "edge_floor": t.edge_floor, "cell_size": t.cell_size,
                         "octaves": t.octaves, "persistence": t.persistence},
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DefectSpec":
        kind = DefectKind(d["kind"])
        common = dict(kind=kind, orientation=Orientation(d["orientation"]),
                      region=Rect(*map(int, d["region"])), amplitude=float(d["amplitude"]))
        if kind is DefectKind.BANDING:
            return cls(**common, channel=CMYK_NAMES.index(d["channel"]), sign=Sign(d["sign"]),
                       profile=BandProfile.from_dict(d["profile"]))
        return cls(**common, texture_seed=int(d["texture_seed"]), streak_color=float(d["streak_color"]),
                   texture=StreakParams(**d.get("texture", {})))


def _region(img: np.ndarray, spec: DefectSpec) -> tuple[slice, slice]:
    h, w = img.shape[:2]
    if not spec.region.fits(w, h):
        raise RegionOutOfBounds(f"{spec.kind.value} region {spec.region} outside {w}x{h} image")
    return spec.region.slices()


def apply_streak(img, spec: DefectSpec) -> np.ndarray:
    """Blend a dark textured line into ``spec.region``; never brightens a pixel."""
    if spec.kind is not DefectKind.STREAK:
        raise ValueError("apply_streak needs a streak spec")
    out = as_image(img, 3).copy()
    rows, cols = _region(out, spec)
    tex = streak_texture(spec.length, spec.cross_width, spec.texture_seed, spec.texture, spec.amplitude)
    if spec.orientation is Orientation.VERTICAL:
        tex = tex.T
    d = tex[:, :, None]
    block = out[rows, cols]
    blend = (1.0 - d) * block + d * spec.streak_color
    out[rows, cols] = np.minimum(block, blend)
    return out


def apply_banding(img, spec: DefectSpec) -> np.ndarray:
    """Shift one CMYK channel inside ``spec.region`` by the band profile."""
    if spec.kind is not DefectKind.BANDING:
        raise ValueError("apply_banding needs a banding spec")
    out = as_image(img, 3).copy()
    rows, cols = _region(out, spec)
    weights = banding_profile(spec.cross_width, spec.profile) * spec.sign.factor
    weights = weights[:, None] if spec.orientation is Orientation.HORIZONTAL else weights[None, :]
    cmyk = rgb_to_cmyk(out[rows, cols])
    cmyk[..., spec.channel] = np.clip(cmyk[..., spec.channel] + weights, 0.0, 1.0)
    out[rows, cols] = cmyk_to_rgb(cmyk)
    return out


def apply_defect(img, spec: DefectSpec) -> np.ndarray:
    if spec.kind is DefectKind.STREAK:
        return apply_streak(img, spec)
    return apply_banding(img, spec)


def apply_defects(img, specs) -> np.ndarray:
    """Apply ``specs`` in order."""
    out = as_image(img, 3)
    for spec in specs:
        out = apply_defect(out, spec)
    return out if specs else out.copy()


def render_mask(specs, w: int, h: int, scheme: ClassScheme | str = ClassScheme.MULTI) -> np.ndarray:
    """Paint defect regions into a label mask.

    Banding regions are painted first in list order (later ones win), then
    streaks, so a streak always overrides banding where they overlap.
    """
    scheme = ClassScheme.parse(scheme)
    mask = np.zeros((h, w), dtype=np.uint8)
    ordered = [s for s in specs if s.kind is DefectKind.BANDING] + [s for s in specs if s.kind is DefectKind.STREAK]
    for spec in ordered:
        if not spec.region.fits(w, h):
            raise RegionOutOfBounds(f"{spec.region} outside {w}x{h} mask")
        mask[spec.region.slices()] = spec.label(scheme)
    return mask


def defect_footprint(specs, w: int, h: int) -> np.ndarray:
    """Boolean union of all defect regions."""
    out = np.zeros((h, w), dtype=bool)
    for spec in specs:
        out[spec.region.slices()] = True
    return out
