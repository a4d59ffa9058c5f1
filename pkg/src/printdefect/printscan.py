"""Polynomial print-scan color model: fitting, application, persistence.

Each output channel is a 16-term polynomial in the normalized pixel position
``(x, y)`` and the input color ``(R, G, B)``::

    a0 + a1 y + a2 x + a3 R + a4 G + a5 B + a6 yR + a7 yG + a8 yB
       + a9 xR + a10 xG + a11 xB + a12 RG + a13 RB + a14 GB + a15 RGB
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, FormatError, RankDeficient
from .imgcore import as_image

TERM_NAMES = ("1", "y", "x", "R", "G", "B", "yR", "yG", "yB", "xR", "xG", "xB", "RG", "RB", "GB", "RGB")
N_TERMS = len(TERM_NAMES)
CHANNELS = ("r", "g", "b")
DEFAULT_RIDGE = 1e-8


def design_row(x, y, r, g, b) -> np.ndarray:
    """The 16 monomials for one sample (or broadcast arrays of samples, last axis = terms)."""
    x, y, r, g, b = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, y, r, g, b)))
    one = np.ones_like(x)
    return np.stack(
        [one, y, x, r, g, b, y * r, y * g, y * b, x * r, x * g, x * b, r * g, r * b, g * b, r * g * b],
        axis=-1,
    )


def pixel_coordinates(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized ``x = col / (width - 1)``, ``y = row / (height - 1)``; 0 on a unit axis."""
    xs = np.arange(width) / (width - 1) if width > 1 else np.zeros(1)
    ys = np.arange(height) / (height - 1) if height > 1 else np.zeros(1)
    return xs, ys


@dataclass(frozen=True)
class PrintScanModel:
    """Coefficients with shape ``(3, 16)``: one row per output channel R, G, B."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.shape != (3, N_TERMS):
            raise ValueError(f"coefficients must have shape (3, {N_TERMS}), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def identity(cls) -> "PrintScanModel":
        c = np.zeros((3, N_TERMS))
        c[0, 3] = c[1, 4] = c[2, 5] = 1.0
        return cls(c)

    def to_dict(self, ridge: float | None = None, rmse=None) -> dict:
        d = {
            "order": list(TERM_NAMES),
            "coeffs": {ch: self.coeffs[i].tolist() for i, ch in enumerate(CHANNELS)},
        }
        d["ridge"] = ridge
        d["rmse"] = None if rmse is None else {ch: float(rmse[i]) for i, ch in enumerate(CHANNELS)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PrintScanModel":
        if list(d.get("order", [])) != list(TERM_NAMES):
            raise FormatError(f"model term order must be {list(TERM_NAMES)}")
        try:
            rows = [d["coeffs"][ch] for ch in CHANNELS]
        except (KeyError, TypeError):
            raise FormatError("model needs coeffs for channels r, g, b") from None
        if any(len(r) != N_TERMS for r in rows):
            raise FormatError(f"each channel needs {N_TERMS} coefficients")
        return cls(np.array(rows, dtype=np.float64))

    def save(self, path, ridge: float | None = None, rmse=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(ridge, rmse), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PrintScanModel":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class FitReport:
    rmse: np.ndarray
    samples: int
    condition: float
    ridge: float
    rank: int

    def to_dict(self) -> dict:
        return {
            "rmse": {ch: float(self.rmse[i]) for i, ch in enumerate(CHANNELS)},
            "samples": self.samples,
            "condition": self.condition,
            "ridge": self.ridge,
            "rank": self.rank,
        }


def stratified_positions(width: int, height: int, samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center pixel positions on a regular grid with at least ``samples`` points.

    Every pixel is used when ``samples >= width * height``.
    """
    if samples >= width * height:
        rows, cols = np.divmod(np.arange(width * height), width)
        return rows, cols
    ny = max(1, min(height, round(math.sqrt(samples * height / width))))
    nx = min(width, math.ceil(samples / ny))
    while nx * ny < samples and ny < height:
        ny += 1
        nx = min(width, math.ceil(samples / ny))
    rows = ((np.arange(ny) + 0.5) * height / ny).astype(np.int64)
    cols = ((np.arange(nx) + 0.5) * width / nx).astype(np.int64)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr.ravel(), cc.ravel()


def design_matrix(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    xs, ys = pixel_coordinates(w, h)
    px = img[rows, cols]
    return design_row(xs[cols], ys[rows], px[:, 0], px[:, 1], px[:, 2])


def fit_printscan(src, dst, samples: int = 10_000, ridge: float = DEFAULT_RIDGE):
    """Least-squares fit of ``dst ~ F(src)`` per output channel.

    Minimizes ``|A a - t|^2 + ridge |a|^2`` with an SVD-based solver on the
    stacked system ``[A; sqrt(ridge) I]``. Returns ``(model, report)``; the
    report RMSE is measured over every pixel with clamped predictions.

    Raises :class:`RankDeficient` if ``ridge == 0`` and the design matrix does
    not have full column rank.
    """
    src = as_image(src, 3)
    dst = as_image(dst, 3)
    if src.shape != dst.shape:
        raise DimMismatch(f"source {src.shape} and target {dst.shape} differ")
    if samples < N_TERMS:
        raise ValueError(f"need at least {N_TERMS} samples, got {samples}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    h, w = src.shape[:2]
    rows, cols = stratified_positions(w, h, samples)
    A = design_matrix(src, rows, cols)
    t = dst[rows, cols]
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * max(A.shape) * np.finfo(float).eps)) if sv[0] > 0 else 0
    condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if ridge == 0 and rank < N_TERMS:
        raise RankDeficient(f"design matrix rank {rank} < {N_TERMS}; supply ridge > 0")
    if ridge > 0:
        A = np.vstack([A, math.sqrt(ridge) * np.eye(N_TERMS)])
        t = np.vstack([t, np.zeros((N_TERMS, 3))])
    coeffs, *_ = np.linalg.lstsq(A, t, rcond=None)
    model = PrintScanModel(coeffs.T)
    report = FitReport(fit_residual(model, src, dst), len(rows), condition, float(ridge), rank)
    return model, report


def fit_printscan_normal(src, dst, samples: int = 10_000, ridge: float = DEFAULT_RIDGE) -> PrintScanModel:
    """Same problem as :func:`fit_printscan` solved through the normal equations."""
    src = as_image(src, 3)
    dst = as_image(dst, 3)
    h, w = src.shape[:2]
    rows, cols = stratified_positions(w, h, samples)
    A = design_matrix(src, rows, cols)
    t = dst[rows, cols]
    gram = A.T @ A + ridge * np.eye(N_TERMS)
    return PrintScanModel(np.linalg.solve(gram, A.T @ t).T)


def predict(img, model: PrintScanModel) -> np.ndarray:
    """Unclamped polynomial output."""
    img = as_image(img, 3)
    h, w = img.shape[:2]
    xs, ys = pixel_coordinates(w, h)
    terms = design_row(xs[None, :], ys[:, None], img[..., 0], img[..., 1], img[..., 2])
    return terms @ model.coeffs.T


def apply_printscan(img, model: PrintScanModel) -> np.ndarray:
    return np.clip(predict(img, model), 0.0, 1.0)


def fit_residual(model: PrintScanModel, src, dst) -> np.ndarray:
    """Per-channel RMSE of the clamped prediction against ``dst``."""
    dst = as_image(dst, 3)
    pred = apply_printscan(src, model)
    if pred.shape != dst.shape:
        raise DimMismatch(f"source {pred.shape} and target {dst.shape} differ")
    return np.sqrt(np.mean((pred - dst) ** 2, axis=(0, 1)))
