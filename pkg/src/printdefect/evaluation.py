"""Confusion-matrix metrics, the weighted training loss, reports, overlays."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .errors import AllClassesEmpty, DimMismatch, LabelOutOfRange
from .imgcore import STREAK_LABEL, ClassScheme, as_image
from .infer import build_stack, infer, make_segmenter

BACKGROUND_WEIGHT = 0.05
OVERLAY_ALPHA = 0.6
STREAK_COLOR = (0.0, 1.0, 0.0)
BANDING_COLOR = (1.0, 0.0, 1.0)


def confusion(pred, gt, num_classes: int) -> np.ndarray:
    """``conf[i, j]`` counts pixels with ground truth ``i`` predicted as ``j``."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimMismatch(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelOutOfRange(f"{name} labels must be in [0, {num_classes})")
    idx = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou(conf: np.ndarray):
    """Per-class IoU and their mean over classes with a nonzero union.

    Classes absent from both prediction and ground truth get ``nan`` and are
    left out of the mean.
    """
    conf = np.asarray(conf, dtype=np.int64)
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    present = union > 0
    if not present.any():
        raise AllClassesEmpty("no class has a nonzero union")
    per_class = np.full(conf.shape[0], np.nan)
    per_class[present] = inter[present] / union[present]
    return per_class, float(per_class[present].mean())


def pixel_accuracy(conf: np.ndarray) -> float:
    total = conf.sum()
    return float(np.trace(conf) / total) if total else float("nan")


def default_weights(num_classes: int, background: float = BACKGROUND_WEIGHT) -> np.ndarray:
    w = np.ones(num_classes)
    w[0] = background
    return w


def _flatten(scores, gt, weights):
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt)
    if scores.shape[:-1] != gt.shape:
        raise DimMismatch(f"scores {scores.shape} do not match labels {gt.shape}")
    c = scores.shape[-1]
    weights = default_weights(c) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,) or np.any(weights <= 0):
        raise ValueError(f"need {c} positive class weights")
    return scores.reshape(-1, c), gt.reshape(-1).astype(np.int64), weights


def _log_softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def weighted_cross_entropy(scores, gt, weights=None) -> float:
    """Mean over pixels of ``weight[y] * -log softmax(scores)[y]``.

    Not renormalized by the sum of weights. Default weights are 0.05 for
    background and 1 for every defect class.
    """
    s, y, w = _flatten(scores, gt, weights)
    logp = _log_softmax(s)[np.arange(len(y)), y]
    return float(np.mean(-w[y] * logp))


def loss_gradient(scores, gt, weights=None) -> np.ndarray:
    """Gradient of :func:`weighted_cross_entropy` with respect to ``scores``."""
    shape = np.shape(scores)
    s, y, w = _flatten(scores, gt, weights)
    prob = np.exp(_log_softmax(s))
    prob[np.arange(len(y)), y] -= 1.0
    grad = prob * (w[y] / len(y))[:, None]
    return grad.reshape(shape)


def render_overlay(img, mask, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Green over streak pixels, magenta over any banding pixels."""
    img = as_image(img, 3)
    mask = np.asarray(mask)
    if mask.shape != img.shape[:2]:
        raise DimMismatch(f"mask {mask.shape} and image {img.shape[:2]} differ")
    out = img.copy()
    for sel, color in ((mask == STREAK_LABEL, STREAK_COLOR), (mask >= 2, BANDING_COLOR)):
        out[sel] = (1.0 - alpha) * img[sel] + alpha * np.asarray(color)
    return out


@dataclass
class EvalReport:
    per_class_iou: list
    miou_mean: float
    miou_std: float
    pixel_accuracy: float
    seconds_per_image: float
    method: str = "unknown"
    strategy: str = "unknown"
    runs: int = 1
    class_scheme: str = "multi"
    class_names: list = field(default_factory=list)
    excluded_classes: list = field(default_factory=list)
    images: int = 0
    run_miou: list = field(default_factory=list)
    aggregation: str = "dataset"
    includes_background: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_iou"] = [None if np.isnan(v) else float(v) for v in self.per_class_iou]
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    CSV_COLUMNS = ("method", "mode", "miou_mean", "miou_std", "seconds_per_image")

    def csv_row(self) -> dict:
        strategy = {"resized": "Resized image", "patch": "Patch-based"}.get(self.strategy, self.strategy)
        return {"method": strategy, "mode": self.method.upper(), "miou_mean": f"{self.miou_mean:.6f}",
                "miou_std": f"{self.miou_std:.6f}", "seconds_per_image": f"{self.seconds_per_image:.4f}"}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(self.csv_row())
        return buf.getvalue()


def summarize(run_confs, scheme: ClassScheme, seconds, images, *, method="unknown", strategy="unknown",
              per_image_mious=None) -> EvalReport:
    """Build a report from one dataset-level confusion matrix per run.

    With ``per_image_mious`` (one list per run) the run score is the mean of
    per-image mIoU instead of the dataset-level mIoU.
    """
    run_confs = [np.asarray(c) for c in run_confs]
    if not run_confs:
        raise ValueError("need at least one run")
    if per_image_mious is None:
        mious = [iou(c)[1] for c in run_confs]
        aggregation = "dataset"
    else:
        mious = [float(np.mean(m)) for m in per_image_mious]
        aggregation = "per-image"
    pooled = np.sum(run_confs, axis=0)
    per_class, _ = iou(pooled)
    return EvalReport(
        per_class_iou=per_class.tolist(),
        miou_mean=float(np.mean(mious)),
        miou_std=float(np.std(mious)),
        pixel_accuracy=pixel_accuracy(pooled),
        seconds_per_image=float(seconds),
        method=method,
        strategy=strategy,
        runs=len(run_confs),
        class_scheme=scheme.value,
        class_names=list(scheme.names),
        excluded_classes=[scheme.names[i] for i in np.flatnonzero(np.isnan(per_class))],
        images=images,
        run_miou=mious,
        aggregation=aggregation,
    )


def run_eval(dataset_dir, segmenter, strategy: str = "patch", runs: int = 4, scheme=None,
             per_image: bool = False, segmenter_kwargs: dict | None = None) -> EvalReport:
    """Evaluate a segmenter on every sample of an exported dataset.

    ``segmenter`` is a registry name or a callable ``f(entry, gt) -> Segmenter``.
    FR segmenters receive the reference-first 6-channel stack. Timing covers
    inference only and is averaged over all images and runs.
    """
    from .datagen import load_manifest

    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    samples = manifest["samples"]
    if not samples:
        raise ValueError(f"{dataset_dir}: dataset has no samples to evaluate")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    data_scheme = ClassScheme.parse(manifest["class_scheme"])
    scheme = data_scheme if scheme is None else ClassScheme.parse(scheme)
    if scheme is ClassScheme.MULTI and data_scheme is ClassScheme.COLLAPSED:
        raise ValueError("collapsed masks cannot be evaluated under the multi scheme")
    kwargs = segmenter_kwargs or {}

    def factory(entry, gt):
        if callable(segmenter):
            return segmenter(entry, gt)
        return make_segmenter(segmenter, scheme, gt=gt, **kwargs)

    run_confs, run_image_mious, elapsed, count = [], [], 0.0, 0
    method = None
    for _ in range(runs):
        total = np.zeros((scheme.num_classes,) * 2, dtype=np.int64)
        image_mious = []
        for entry in samples:
            gt = imgio.read_mask(dataset_dir / entry["mask"])
            if scheme is not data_scheme:
                gt = data_scheme.collapse(gt)
            seg = factory(entry, gt)
            dfc = imgio.read_rgb(dataset_dir / entry["defective"])
            if seg.input_channels == 6:
                stack = build_stack(dfc, imgio.read_rgb(dataset_dir / entry["reference"]))
                method = "fr"
            else:
                stack = build_stack(dfc)
                method = method or ("nr" if seg.input_channels == 3 else "oracle")
            t0 = time.perf_counter()
            pred = infer(stack, seg, strategy)
            elapsed += time.perf_counter() - t0
            count += 1
            conf = confusion(pred, gt, scheme.num_classes)
            total += conf
            if per_image:
                image_mious.append(iou(conf)[1])
        run_confs.append(total)
        run_image_mious.append(image_mious)
    return summarize(run_confs, scheme, elapsed / count, len(samples), method=method or "unknown",
                     strategy=strategy, per_image_mious=run_image_mious if per_image else None)
