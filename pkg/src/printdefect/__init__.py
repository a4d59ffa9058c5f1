"""Synthetic print-defect data generation, segmentation inference, and evaluation."""
from .datagen import GenConfig, audit_dataset, derive_seed, export_dataset, generate_sample
from .defects import BandProfile, DefectKind, DefectSpec, Orientation, Sign, apply_defects, render_mask
from .errors import *  # noqa: F401,F403
from .evaluation import EvalReport, confusion, iou, loss_gradient, render_overlay, run_eval, weighted_cross_entropy
from .imgcore import ClassScheme, Rect, cmyk_to_rgb, normalize, patch_grid, resize_bicubic, resize_nearest, rgb_to_cmyk
from .infer import (
    FRDiffSegmenter,
    NRProjectionSegmenter,
    Segmenter,
    infer,
    infer_patches,
    infer_resized,
    make_segmenter,
    oracle_segmenter,
)
from .noise import PerlinField, StreakParams, perlin2d, perlin_grid, streak_texture
from .printscan import PrintScanModel, apply_printscan, fit_printscan

__version__ = "0.1.0"
