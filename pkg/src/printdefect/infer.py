"""Segmenter interface, the two inference strategies, and classical baselines.

A segmenter maps an ``(h, w, channels)`` stack to an ``(h, w, classes)``
score map. ``segment`` also receives the region of the original image the
stack was taken from; learned models ignore it, the oracle uses it.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imgio
from .errors import ChannelCountMismatch, RegionOutOfBounds, SegmenterFailure
from .imgcore import STREAK_LABEL, ClassScheme, Rect, patch_grid, resize_bicubic, resize_nearest, rgb_to_cmyk

RESIZED_SIZE = (1280, 720)
PATCH_SIZE = 513
_FILL = -2.0


def argmax_labels(scores: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    return np.argmax(scores, axis=-1).astype(np.uint8)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and labels.max() >= num_classes:
        raise ValueError(f"label {labels.max()} outside {num_classes} classes")
    return (labels[..., None] == np.arange(num_classes)).astype(np.float64)


class Segmenter:
    """Base class. Subclasses implement :meth:`_scores`."""

    input_channels: int | None = None

    def __init__(self, scheme: ClassScheme | str = ClassScheme.MULTI):
        self.scheme = ClassScheme.parse(scheme)

    @property
    def num_classes(self) -> int:
        return self.scheme.num_classes

    def segment(self, stack: np.ndarray, region: Rect | None = None) -> np.ndarray:
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 3:
            raise ChannelCountMismatch(f"expected an (h, w, c) stack, got shape {stack.shape}")
        if self.input_channels is not None and stack.shape[2] != self.input_channels:
            raise ChannelCountMismatch(
                f"{type(self).__name__} needs {self.input_channels} channels, got {stack.shape[2]}")
        h, w = stack.shape[:2]
        if region is None:
            region = Rect(0, 0, w, h)
        scores = self._scores(stack, region)
        expected = (h, w, self.num_classes)
        if getattr(scores, "shape", None) != expected:
            raise SegmenterFailure(f"{type(self).__name__} returned {getattr(scores, 'shape', None)}, "
                                   f"expected {expected}")
        if not np.all(np.isfinite(scores)):
            raise SegmenterFailure(f"{type(self).__name__} returned non-finite scores")
        return scores

    __call__ = segment

    def _scores(self, stack: np.ndarray, region: Rect) -> np.ndarray:
        raise NotImplementedError


class ScoreMapSegmenter(Segmenter):
    """Replays a fixed full-image score map.

    The requested region is cropped from the map and nearest-resampled to the
    stack size, so it serves both tiled and downscaled requests.
    """

    def __init__(self, scores: np.ndarray, scheme: ClassScheme | str = ClassScheme.MULTI,
                 input_channels: int | None = None):
        super().__init__(scheme)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 3 or scores.shape[2] != self.num_classes:
            raise ValueError(f"score map needs shape (H, W, {self.num_classes}), got {scores.shape}")
        self.scores = scores
        self.input_channels = input_channels

    def _scores(self, stack, region):
        H, W = self.scores.shape[:2]
        if not region.fits(W, H):
            raise RegionOutOfBounds(f"{region} outside the {W}x{H} score map")
        crop = self.scores[region.slices()]
        h, w = stack.shape[:2]
        if crop.shape[:2] != (h, w):
            crop = resize_nearest(crop, w, h)
        return crop.copy()


def oracle_segmenter(gt: np.ndarray, scheme: ClassScheme | str = ClassScheme.MULTI) -> ScoreMapSegmenter:
    """Test segmenter returning one-hot scores of the ground truth."""
    scheme = ClassScheme.parse(scheme)
    return ScoreMapSegmenter(one_hot(gt, scheme.num_classes), scheme)


def external_segmenter(path, scheme: ClassScheme | str = ClassScheme.MULTI) -> ScoreMapSegmenter:
    """Segmenter backed by a score-map file written by an external model."""
    return ScoreMapSegmenter(imgio.read_tensor(path, imgio.SCORE_MAGIC), scheme)


def infer_resized(stack, seg: Segmenter, orig_dims: tuple[int, int] | None = None,
                  size: tuple[int, int] = RESIZED_SIZE, clamp: bool = True) -> np.ndarray:
    """Downscale to ``size``, segment once, and map labels back to ``orig_dims = (w, h)``."""
    stack = np.asarray(stack, dtype=np.float64)
    h, w = stack.shape[:2]
    ow, oh = orig_dims if orig_dims is not None else (w, h)
    small = resize_bicubic(stack, size[0], size[1], clamp=clamp)
    labels = argmax_labels(seg.segment(small, Rect(0, 0, w, h)))
    return resize_nearest(labels, ow, oh)


def stitch_scores(stack, seg: Segmenter, patch: int = PATCH_SIZE, workers: int = 1) -> np.ndarray:
    """Mean of per-tile scores over the flush-anchored tiling.

    Tiles may be segmented in parallel; accumulation always runs in tile order.
    """
    stack = np.asarray(stack, dtype=np.float64)
    h, w = stack.shape[:2]
    rects = patch_grid(w, h, patch)

    def run(rect):
        return seg.segment(stack[rect.slices()], rect)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tiles = list(pool.map(run, rects))
    else:
        tiles = [run(r) for r in rects]
    acc = np.zeros((h, w, seg.num_classes))
    counts = np.zeros((h, w, 1))
    for rect, tile in zip(rects, tiles):
        rows, cols = rect.slices()
        acc[rows, cols] += tile
        counts[rows, cols] += 1.0
    return acc / counts


def infer_patches(stack, seg: Segmenter, patch: int = PATCH_SIZE, workers: int = 1) -> np.ndarray:
    return argmax_labels(stitch_scores(stack, seg, patch, workers))


def infer(stack, seg: Segmenter, strategy: str, **kw) -> np.ndarray:
    if strategy == "resized":
        return infer_resized(stack, seg, **kw)
    if strategy == "patch":
        return infer_patches(stack, seg, **kw)
    raise ValueError(f"unknown strategy {strategy!r}; expected 'resized' or 'patch'")


# --- classical baselines ----------------------------------------------------

@dataclass(frozen=True)
class FRDiffParams:
    tau: float = 0.04
    sigma: float = 0.5
    rho: float = 8.0
    t_max: int = 18
    min_area: int = 20


@dataclass(frozen=True)
class NRProjParams:
    z_thr: float = 5.0
    window: int = 33
    t_max: int = 18
    scale_floor: float = 0.004


def _opening(mask: np.ndarray, k: int) -> np.ndarray:
    m = mask.astype(np.uint8)
    eroded = ndimage.minimum_filter(m, size=(k, k), mode="nearest")
    return ndimage.maximum_filter(eroded, size=(k, k), mode="nearest").astype(bool) & mask


def _drop_small(mask: np.ndarray, min_area: int) -> np.ndarray:
    if min_area <= 1:
        return mask
    lab, n = ndimage.label(mask)
    if n == 0:
        return mask
    areas = np.bincount(lab.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[lab]


def _banding_channel(ref_cmyk: np.ndarray, dfc_cmyk: np.ndarray, sel) -> int:
    delta = (dfc_cmyk[sel] - ref_cmyk[sel]).mean(axis=0)
    return int(np.argmax(np.abs(delta)))


class FRDiffSegmenter(Segmenter):
    """Full-reference baseline: thresholded reference/defective difference.

    Connected components of the blurred difference are split into streaks
    (thin, elongated) and banding (everything else). Banding channel comes
    from the largest mean CMYK change inside each component.
    """

    input_channels = 6

    def __init__(self, scheme: ClassScheme | str = ClassScheme.MULTI, params: FRDiffParams | None = None):
        super().__init__(scheme)
        self.params = params or FRDiffParams()

    def _scores(self, stack, region):
        p = self.params
        ref, dfc = stack[..., :3], stack[..., 3:]
        diff = np.abs(dfc - ref).max(axis=2)
        if p.sigma > 0:
            diff = ndimage.gaussian_filter(diff, p.sigma, mode="nearest")
        defect = _drop_small(diff > p.tau, p.min_area)
        thick = _opening(defect, p.t_max + 1)
        thin = defect & ~thick
        streak = np.zeros_like(defect)
        lab, n = ndimage.label(thin)
        for i, sl in enumerate(ndimage.find_objects(lab), start=1):
            comp = lab[sl] == i
            long_side = max(comp.shape)
            short_side = max(1, min(comp.shape))
            thickness = comp.sum() / long_side
            if long_side / short_side >= p.rho and thickness <= p.t_max:
                streak[sl] |= comp
                # Ground truth ranks streaks above banding, so carry the line
                # through any thick region it crosses.
                if comp.shape[1] >= comp.shape[0]:
                    streak[sl[0], :] |= thick[sl[0], :]
                else:
                    streak[:, sl[1]] |= thick[:, sl[1]]
        banding = defect & ~streak

        scores = np.full(stack.shape[:2] + (self.num_classes,), _FILL)
        scores[..., 0] = p.tau - diff
        margin = diff - p.tau
        scores[..., STREAK_LABEL] = np.where(streak, margin, _FILL)
        if banding.any():
            ref_cmyk = rgb_to_cmyk(np.clip(ref, 0, 1))
            dfc_cmyk = rgb_to_cmyk(np.clip(dfc, 0, 1))
            lab, n = ndimage.label(banding)
            for i, sl in enumerate(ndimage.find_objects(lab), start=1):
                comp = lab[sl] == i
                ch = _banding_channel(ref_cmyk[sl], dfc_cmyk[sl], comp)
                cls = self.scheme.banding_label(ch)
                view = scores[sl + (cls,)]
                view[comp] = margin[sl][comp]
        return scores


def _runs(flags: np.ndarray):
    """Yield ``(start, stop)`` for each run of True values."""
    padded = np.concatenate([[False], flags, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2], edges[1::2]))


class NRProjectionSegmenter(Segmenter):
    """No-reference baseline: outlier rows and columns of mean luminance.

    Each line mean is compared with a sliding median of its neighbors; the
    residual is scaled by a robust (MAD) spread. Runs of outlier lines are
    streaks when at most ``t_max`` thick, banding otherwise.
    """

    input_channels = 3

    def __init__(self, scheme: ClassScheme | str = ClassScheme.MULTI, params: NRProjParams | None = None):
        super().__init__(scheme)
        self.params = params or NRProjParams()

    def line_scores(self, lum: np.ndarray, axis: int) -> np.ndarray:
        """Robust z-score of every line (rows for ``axis=1``, columns for ``axis=0``)."""
        p = self.params
        means = lum.mean(axis=axis)
        local = ndimage.median_filter(means, size=min(p.window, means.size), mode="nearest")
        resid = means - local
        spread = 1.4826 * np.median(np.abs(resid - np.median(resid)))
        return resid / max(spread, p.scale_floor)

    def _scores(self, stack, region):
        p = self.params
        rgb = np.clip(stack, 0.0, 1.0)
        lum = rgb @ np.array([0.299, 0.587, 0.114])
        cmyk = None
        scores = np.full(stack.shape[:2] + (self.num_classes,), _FILL)
        scores[..., 0] = 0.0
        for axis in (1, 0):
            z = self.line_scores(lum, axis)
            flagged = np.abs(z) >= p.z_thr
            for start, stop in _runs(flagged):
                if stop - start <= p.t_max:
                    cls = STREAK_LABEL
                else:
                    if cmyk is None:
                        cmyk = rgb_to_cmyk(rgb)
                    line_cmyk = cmyk.mean(axis=axis)
                    local = ndimage.median_filter(line_cmyk, size=(min(p.window, len(line_cmyk)), 1),
                                                  mode="nearest")
                    delta = (line_cmyk[start:stop] - local[start:stop]).mean(axis=0)
                    cls = self.scheme.banding_label(int(np.argmax(np.abs(delta))))
                line = np.abs(z[start:stop]) - p.z_thr + 1e-6
                if axis == 1:
                    view = scores[start:stop, :, cls]
                    np.maximum(view, line[:, None], out=view)
                else:
                    view = scores[:, start:stop, cls]
                    np.maximum(view, line[None, :], out=view)
        return scores


SEGMENTERS = ("frdiff", "nrproj", "oracle", "external")


def make_segmenter(name: str, scheme: ClassScheme | str = ClassScheme.MULTI, *, gt=None, scores_path=None,
                   frdiff: FRDiffParams | None = None, nrproj: NRProjParams | None = None) -> Segmenter:
    """Registry lookup by name: ``frdiff``, ``nrproj``, ``oracle``, ``external``."""
    if name == "frdiff":
        return FRDiffSegmenter(scheme, frdiff)
    if name == "nrproj":
        return NRProjectionSegmenter(scheme, nrproj)
    if name == "oracle":
        if gt is None:
            raise ValueError("the oracle segmenter needs a ground-truth mask")
        return oracle_segmenter(gt, scheme)
    if name == "external":
        if scores_path is None:
            raise ValueError("the external segmenter needs a score-map file")
        return external_segmenter(scores_path, scheme)
    raise ValueError(f"unknown segmenter {name!r}; choose from {SEGMENTERS}")


def build_stack(defective: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """3-channel NR stack, or 6-channel FR stack with the reference first."""
    if reference is None:
        return np.asarray(defective, dtype=np.float64)
    return np.concatenate([reference, defective], axis=2).astype(np.float64)
