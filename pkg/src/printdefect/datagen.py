"""Synthetic training-data pipeline.

Order per sample: print-scan simulation, scenario sampling, defect
injection, mask rendering, then cover-resize and center-crop to the target
size. Per-sample seeds come from ``derive_seed(master_seed, index)`` so
samples can be generated in any order or in parallel.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import imgio
from .defects import (
    BandProfile,
    DefectKind,
    DefectSpec,
    Orientation,
    Sign,
    apply_defects,
    defect_footprint,
    render_mask,
)
from .errors import ConfigError, DimMismatch, ImageTooSmall, SourceTooSmall
from .imgcore import ClassScheme, Rect, as_image, normalize, resize_bicubic, resize_nearest
from .noise import StreakParams
from .printscan import PrintScanModel, apply_printscan

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")
PATCH_SIZE = 513
VISIBLE_DELTA = 1.0 / 255.0


def _pair(value, name, cast=float, ordered=True):
    try:
        lo, hi = (cast(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a [low, high] pair") from None
    if ordered and lo > hi:
        raise ConfigError(f"{name}: low {lo} exceeds high {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class GenConfig:
    """Scenario and pipeline parameters.

    Defect widths are given at the target resolution and rescaled to the
    source resolution before injection. ``banding_shares`` are per-defect
    probabilities for C, M, Y, K and must sum to ``1 - p_streak``; when left
    as ``None`` the complement is split evenly.
    """

    p_defective: float = 0.9
    p_streak: float = 0.4
    banding_shares: tuple[float, float, float, float] | None = None
    defect_count: tuple[int, int] = (1, 4)
    streak_width: tuple[int, int] = (3, 15)
    band_width: tuple[int, int] = (20, 200)
    streak_amplitude: tuple[float, float] = (0.3, 0.9)
    band_amplitude: tuple[float, float] = (0.05, 0.3)
    streak_color: tuple[float, float] = (0.0, 0.25)
    p_excess: float = 1.0
    band_mu_fraction: tuple[float, float] = (0.1, 0.3)
    band_sigma_fraction: tuple[float, float] = (0.2, 0.35)
    partial_length: bool = False
    length_fraction: tuple[float, float] = (0.3, 1.0)
    size: tuple[int, int] | None = (1920, 1080)
    master_seed: int = 0
    class_scheme: str = "multi"
    texture: StreakParams = field(default_factory=StreakParams)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        for name in ("p_defective", "p_streak", "p_excess"):
            p = float(getattr(self, name))
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
            set_(name, p)
        shares = self.banding_shares
        if shares is None:
            shares = (1.0 - self.p_streak) / 4.0
            shares = (shares,) * 4
        shares = tuple(float(s) for s in shares)
        if len(shares) != 4 or any(s < 0 for s in shares):
            raise ConfigError("banding_shares needs four non-negative values")
        if abs(sum(shares) - (1.0 - self.p_streak)) > 1e-9:
            raise ConfigError(f"banding_shares sum {sum(shares)} != 1 - p_streak = {1.0 - self.p_streak}")
        set_("banding_shares", shares)
        for name in ("defect_count", "streak_width", "band_width"):
            lo, hi = _pair(getattr(self, name), name, int)
            if lo < 1:
                raise ConfigError(f"{name} must be >= 1")
            set_(name, (lo, hi))
        for name in ("streak_amplitude", "band_amplitude", "streak_color", "band_mu_fraction",
                     "band_sigma_fraction", "length_fraction"):
            lo, hi = _pair(getattr(self, name), name)
            if lo < 0 or hi > 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
            set_(name, (lo, hi))
        if self.band_mu_fraction[1] > 0.5:
            raise ConfigError("band_mu_fraction must not exceed 0.5")
        if self.band_sigma_fraction[0] <= 0:
            raise ConfigError("band_sigma_fraction must be positive")
        if self.size is not None:
            tw, th = _pair(self.size, "size", int, ordered=False)
            if tw < 1 or th < 1:
                raise ConfigError("size must be positive")
            set_("size", (tw, th))
        ClassScheme.parse(self.class_scheme)
        set_("master_seed", int(self.master_seed))
        if isinstance(self.texture, dict):
            set_("texture", StreakParams(**self.texture))

    @property
    def scheme(self) -> ClassScheme:
        return ClassScheme.parse(self.class_scheme)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown GenConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "texture" in d:
            tk = {f.name for f in fields(StreakParams)}
            bad = set(d["texture"]) - tk
            if bad:
                raise ConfigError(f"unknown texture keys: {sorted(bad)}")
            d["texture"] = StreakParams(**d["texture"])
        return cls(**d)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit per-sample seed from ``(master_seed, index)`` via numpy SeedSequence."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Scenario:
    defective: bool
    specs: tuple[DefectSpec, ...]


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _sample_defect(rng, cfg: GenConfig, width: int, height: int, scale: float) -> DefectSpec:
    is_streak = rng.random() < cfg.p_streak
    if not is_streak:
        shares = np.asarray(cfg.banding_shares)
        channel = int(rng.choice(4, p=shares / shares.sum()))
    horizontal = rng.random() < 0.5
    orientation = Orientation.HORIZONTAL if horizontal else Orientation.VERTICAL
    cross_dim, long_dim = (height, width) if horizontal else (width, height)
    lo, hi = cfg.streak_width if is_streak else cfg.band_width
    cross = int(rng.integers(lo, hi + 1))
    cross = int(np.clip(round(cross * scale), 1, cross_dim))
    offset = int(rng.integers(0, cross_dim - cross + 1))
    if cfg.partial_length:
        length = max(1, min(long_dim, round(_uniform(rng, cfg.length_fraction) * long_dim)))
        start = int(rng.integers(0, long_dim - length + 1))
    else:
        length, start = long_dim, 0
    region = Rect(start, offset, length, cross) if horizontal else Rect(offset, start, cross, length)

    if is_streak:
        amp = _uniform(rng, cfg.streak_amplitude)
        return DefectSpec(DefectKind.STREAK, orientation, region, amp,
                          texture_seed=int(rng.integers(0, 2**63)),
                          streak_color=_uniform(rng, cfg.streak_color), texture=cfg.texture)
    amp = _uniform(rng, cfg.band_amplitude)
    sign = Sign.EXCESS if rng.random() < cfg.p_excess else Sign.LACK
    mu1 = _uniform(rng, cfg.band_mu_fraction) * (cross - 1)
    sigma = max(_uniform(rng, cfg.band_sigma_fraction) * cross, 0.5)
    profile = BandProfile(mu1, (cross - 1) - mu1, sigma, amp)
    return DefectSpec(DefectKind.BANDING, orientation, region, amp, channel=channel, sign=sign, profile=profile)


def sample_scenario(rng, cfg: GenConfig, width: int, height: int, scale: float = 1.0) -> Scenario:
    """Draw the defect list for one ``width`` x ``height`` image.

    ``scale`` converts configured widths (target resolution) to source pixels.
    """
    if rng.random() >= cfg.p_defective:
        return Scenario(False, ())
    lo, hi = cfg.defect_count
    n = int(rng.integers(lo, hi + 1))
    return Scenario(True, tuple(_sample_defect(rng, cfg, width, height, scale) for _ in range(n)))


def cover_scale(width: int, height: int, size) -> float:
    tw, th = size
    return max(tw / width, th / height)


def cover_resize(arr: np.ndarray, size, nearest: bool = False) -> np.ndarray:
    """Scale to cover ``size = (w, h)`` keeping aspect ratio, then center-crop."""
    h, w = arr.shape[:2]
    tw, th = size
    if (w, h) == (tw, th):
        return arr.copy()
    s = cover_scale(w, h, size)
    nw = max(tw, round(w * s))
    nh = max(th, round(h * s))
    resized = resize_nearest(arr, nw, nh) if nearest else resize_bicubic(arr, nw, nh)
    x0 = (nw - tw) // 2
    y0 = (nh - th) // 2
    return resized[y0:y0 + th, x0:x0 + tw].copy()


@dataclass
class NativeSample:
    """A sample at source resolution, before resizing."""

    clean: np.ndarray
    defective: np.ndarray
    mask: np.ndarray
    specs: tuple[DefectSpec, ...]
    scenario: Scenario


@dataclass
class SamplePair:
    reference: np.ndarray
    defective: np.ndarray
    mask: np.ndarray
    specs: tuple[DefectSpec, ...]
    sample_seed: int
    scheme: ClassScheme = ClassScheme.MULTI


def synthesize_native(src, model: PrintScanModel | None, cfg: GenConfig, sample_seed: int) -> NativeSample:
    src = as_image(src, 3)
    h, w = src.shape[:2]
    if cfg.size is not None and (w < cfg.size[0] or h < cfg.size[1]):
        raise SourceTooSmall(f"source is {w}x{h}, target needs at least {cfg.size[0]}x{cfg.size[1]}")
    clean = src.copy() if model is None else apply_printscan(src, model)
    scale = 1.0 if cfg.size is None else 1.0 / cover_scale(w, h, cfg.size)
    rng = np.random.default_rng(sample_seed)
    scenario = sample_scenario(rng, cfg, w, h, scale)
    defective = apply_defects(clean, scenario.specs)
    mask = render_mask(scenario.specs, w, h, cfg.scheme)
    return NativeSample(clean, defective, mask, scenario.specs, scenario)


def generate_sample(src, model: PrintScanModel | None, cfg: GenConfig, sample_seed: int) -> SamplePair:
    """Full pipeline for one sample. ``model=None`` skips print-scan simulation."""
    native = synthesize_native(src, model, cfg, sample_seed)
    if cfg.size is None:
        ref, dfc, mask = native.clean, native.defective, native.mask
    else:
        ref = cover_resize(native.clean, cfg.size)
        dfc = ref.copy() if not native.specs else cover_resize(native.defective, cfg.size)
        mask = cover_resize(native.mask, cfg.size, nearest=True)
    return SamplePair(ref, dfc, mask, native.specs, int(sample_seed), cfg.scheme)


@dataclass(frozen=True)
class ConsistencyStats:
    labeled: int
    labeled_visible: int
    changed: int
    changed_unlabeled: int
    outside_changed: int

    @property
    def visible_fraction(self) -> float:
        return 1.0 if self.labeled == 0 else self.labeled_visible / self.labeled

    def __add__(self, other: "ConsistencyStats") -> "ConsistencyStats":
        return ConsistencyStats(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))


def mask_consistency(native: NativeSample) -> ConsistencyStats:
    """Pixel-diff audit of one native-resolution sample."""
    delta = np.abs(native.defective - native.clean).max(axis=2)
    changed = native.defective != native.clean
    changed = changed.any(axis=2)
    labeled = native.mask != 0
    h, w = native.mask.shape
    footprint = defect_footprint(native.specs, w, h)
    return ConsistencyStats(
        labeled=int(labeled.sum()),
        labeled_visible=int((labeled & (delta > VISIBLE_DELTA)).sum()),
        changed=int(changed.sum()),
        changed_unlabeled=int((changed & ~labeled).sum()),
        outside_changed=int((changed & ~footprint).sum()),
    )


class Augment(str, enum.Enum):
    ROT90_CW = "rot90cw"
    ROT90_CCW = "rot90ccw"
    HFLIP = "hflip"


def augment(stack, mask, op: Augment | str):
    """Apply one spatial transform to every channel of ``stack`` and to ``mask``."""
    op = Augment(op)
    stack = np.asarray(stack)
    mask = np.asarray(mask)
    if stack.shape[:2] != mask.shape[:2]:
        raise DimMismatch(f"stack {stack.shape[:2]} and mask {mask.shape[:2]} differ")
    if op is Augment.HFLIP:
        f = lambda a: a[:, ::-1]  # noqa: E731
    elif op is Augment.ROT90_CW:
        f = lambda a: np.rot90(a, k=-1, axes=(0, 1))  # noqa: E731
    else:
        f = lambda a: np.rot90(a, k=1, axes=(0, 1))  # noqa: E731
    return np.ascontiguousarray(f(stack)), np.ascontiguousarray(f(mask))


class Mode(str, enum.Enum):
    NR = "nr"
    FR = "fr"

    @property
    def channels(self) -> int:
        return 3 if self is Mode.NR else 6


@dataclass
class TrainingPatch:
    input: np.ndarray
    mask: np.ndarray
    sample_id: str | None
    rect: Rect
    mode: Mode


def training_stack(pair: SamplePair, mode: Mode | str) -> np.ndarray:
    """Normalized network input: defective only (NR) or reference then defective (FR)."""
    mode = Mode(mode)
    defective = normalize(pair.defective).data
    if mode is Mode.NR:
        return defective
    return np.concatenate([normalize(pair.reference).data, defective], axis=2)


def extract_training_patch(pair: SamplePair, mode: Mode | str, rng, size: int = PATCH_SIZE,
                           sample_id: str | None = None, stack: np.ndarray | None = None) -> TrainingPatch:
    """Random ``size`` x ``size`` crop of the normalized stack and its mask.

    Each image is normalized with its own full-image statistics before cropping.
    A precomputed ``stack`` from :func:`training_stack` may be passed in.
    """
    mode = Mode(mode)
    h, w = pair.mask.shape
    if w < size or h < size:
        raise ImageTooSmall(f"{w}x{h} sample cannot hold a {size}x{size} patch")
    x = int(rng.integers(0, w - size + 1))
    y = int(rng.integers(0, h - size + 1))
    rect = Rect(x, y, size, size)
    if stack is None:
        stack = training_stack(pair, mode)
    rows, cols = rect.slices()
    return TrainingPatch(stack[rows, cols].copy(), pair.mask[rows, cols].copy(), sample_id, rect, mode)


def split_dataset(ids, train_fraction: float = 0.9, seed: int = 0):
    """Seeded shuffle, then the first ``floor(n * train_fraction)`` ids train."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot split an empty id list")
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must be in [0, 1]")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = math.floor(len(ids) * train_fraction + 1e-9)
    shuffled = [ids[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


# --- dataset export -------------------------------------------------------

def list_sources(src_dir) -> list[Path]:
    src_dir = Path(src_dir)
    if not src_dir.is_dir():
        raise FileNotFoundError(f"source directory {src_dir} does not exist")
    return sorted(p for p in src_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sample_id(index: int) -> str:
    return f"{index:06d}"


def _export_one(index, sources, out_dir: Path, cfg: GenConfig, model):
    sid = sample_id(index)
    seed = derive_seed(cfg.master_seed, index)
    if not sources:
        return None, {"index": index, "id": sid, "source": None, "reason": "no readable source images"}
    src_path = sources[index % len(sources)]
    try:
        src = imgio.read_rgb(src_path)
    except Exception as exc:  # Pillow raises a variety of types on corrupt input
        log.warning("skipping sample %s: cannot read %s (%s)", sid, src_path, exc)
        return None, {"index": index, "id": sid, "source": str(src_path), "reason": f"IoError: {exc}"}
    try:
        pair = generate_sample(src, model, cfg, seed)
    except SourceTooSmall as exc:
        log.warning("skipping sample %s: %s", sid, exc)
        return None, {"index": index, "id": sid, "source": str(src_path), "reason": f"SourceTooSmall: {exc}"}
    files = {
        "reference": Path("reference") / f"{sid}.png",
        "defective": Path("defective") / f"{sid}.png",
        "mask": Path("mask") / f"{sid}.png",
    }
    imgio.write_rgb(out_dir / files["reference"], pair.reference)
    imgio.write_rgb(out_dir / files["defective"], pair.defective)
    imgio.write_mask(out_dir / files["mask"], pair.mask)
    specs = [s.to_dict() for s in pair.specs]
    meta = Path("meta") / f"{sid}.json"
    _dump_json(out_dir / meta, {"id": sid, "index": index, "seed": seed, "source": str(src_path), "specs": specs})
    entry = {
        "id": sid,
        "index": index,
        "seed": seed,
        "source": str(src_path),
        **{k: str(v) for k, v in files.items()},
        "meta": str(meta),
        "specs": specs,
        "sha256": {k: _sha256(out_dir / v) for k, v in files.items()},
    }
    return entry, None


def export_dataset(src_dir, out_dir, cfg: GenConfig, count: int, model: PrintScanModel | None = None,
                   workers: int = 1) -> dict:
    """Generate ``count`` samples cycling through the images in ``src_dir``.

    Writes ``reference/``, ``defective/``, ``mask/`` PNGs, ``meta/`` JSON per
    sample and ``manifest.json``. Unreadable or undersized sources are skipped
    and recorded under ``"skipped"``. Output bytes depend only on the inputs.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    out_dir = Path(out_dir)
    sources = list_sources(src_dir)
    for sub in ("reference", "defective", "mask", "meta"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    def job(i):
        return _export_one(i, sources, out_dir, cfg, model)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(count)))
    else:
        results = [job(i) for i in range(count)]
    manifest = {
        "config": cfg.to_dict(),
        "class_scheme": cfg.scheme.value,
        "class_names": list(cfg.scheme.names),
        "fr_channel_order": ["reference", "defective"],
        "printscan_model": None if model is None else model.to_dict(),
        "requested": count,
        "samples": [e for e, _ in results if e is not None],
        "skipped": [s for _, s in results if s is not None],
    }
    _dump_json(out_dir / "manifest.json", manifest)
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    with open(path) as fh:
        return json.load(fh)


def manifest_config(manifest: dict) -> GenConfig:
    return GenConfig.from_dict(manifest["config"])


def manifest_model(manifest: dict) -> PrintScanModel | None:
    m = manifest.get("printscan_model")
    return None if m is None else PrintScanModel.from_dict(m)


@dataclass
class AuditReport:
    samples: int = 0
    failures: dict = field(default_factory=dict)
    stats: ConsistencyStats | None = None
    min_visible_fraction: float = 0.99

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, sid, reason):
        self.failures.setdefault(sid, []).append(reason)


def audit_dataset(dataset_dir, min_visible_fraction: float = 0.99) -> AuditReport:
    """Re-derive every sample and check integrity, determinism, and mask consistency.

    Per sample: stored file hashes match the manifest; regenerating from the
    source reproduces the stored rasters; at native resolution no pixel outside
    the defect footprint changed and every changed pixel is labeled. Across the
    dataset at least ``min_visible_fraction`` of labeled pixels must visibly
    differ from the clean image.
    """
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    cfg = manifest_config(manifest)
    model = manifest_model(manifest)
    report = AuditReport(min_visible_fraction=min_visible_fraction)
    total = None
    for entry in manifest["samples"]:
        sid = entry["id"]
        report.samples += 1
        for key in ("reference", "defective", "mask"):
            p = dataset_dir / entry[key]
            if not p.exists():
                report.fail(sid, f"missing {key} file")
            elif _sha256(p) != entry["sha256"][key]:
                report.fail(sid, f"{key} file hash differs from manifest")
        try:
            src = imgio.read_rgb(entry["source"])
        except Exception as exc:
            report.fail(sid, f"cannot read source: {exc}")
            continue
        native = synthesize_native(src, model, cfg, entry["seed"])
        if [s.to_dict() for s in native.specs] != entry["specs"]:
            report.fail(sid, "regenerated defect specs differ from manifest")
        stats = mask_consistency(native)
        total = stats if total is None else total + stats
        if stats.outside_changed:
            report.fail(sid, f"{stats.outside_changed} pixels changed outside defect regions")
        if stats.changed_unlabeled:
            report.fail(sid, f"{stats.changed_unlabeled} changed pixels are unlabeled")
        pair = generate_sample(src, model, cfg, entry["seed"])
        stored = {
            "reference": lambda: imgio.read_rgb(dataset_dir / entry["reference"]),
            "defective": lambda: imgio.read_rgb(dataset_dir / entry["defective"]),
        }
        for key, load in stored.items():
            if (dataset_dir / entry[key]).exists():
                if not np.array_equal(imgio.to_uint8(load()), imgio.to_uint8(getattr(pair, key))):
                    report.fail(sid, f"{key} raster is not reproducible from its seed")
        mpath = dataset_dir / entry["mask"]
        if mpath.exists() and not np.array_equal(imgio.read_mask(mpath), pair.mask):
            report.fail(sid, "mask raster disagrees with rendered defect specs")
    report.stats = total
    if total is not None and total.visible_fraction < min_visible_fraction:
        report.fail("<dataset>", f"only {total.visible_fraction:.4f} of labeled pixels visibly differ")
    return report


def replace_config(cfg: GenConfig, **kw) -> GenConfig:
    return replace(cfg, **kw)
