"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly
(``python tests/test_acceptance.py``) for the summary lines alone.
"""
import hashlib
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from printdefect import imgio
from printdefect.cli import main as cli_main
from printdefect.datagen import GenConfig, augment, derive_seed, mask_consistency, sample_scenario, synthesize_native
from printdefect.evaluation import confusion, iou, loss_gradient, weighted_cross_entropy
from printdefect.infer import (
    FRDiffSegmenter,
    NRProjectionSegmenter,
    build_stack,
    infer_patches,
    oracle_segmenter,
)
from printdefect.noise import PerlinField, perlin2d, perlin_grid
from printdefect.printscan import PrintScanModel, apply_printscan, fit_printscan
from printdefect.sources import diverse_image, photo_like

# Pinned tolerances and floors.
COEFF_TOL = 1e-6
FIT_SECONDS = 10.0
IDENTITY_RMSE = 1e-9
HAND_MIOU = 7 / 12
HAND_TOL = 1e-9
AMPLITUDE_FLOOR = 0.05
VISIBLE_FLOOR = 0.99
P_DEFECTIVE = 0.9
P_DEFECTIVE_TOL = 0.01
LOSS_TOL = 1e-9
FD_STEP = 1e-4
FD_REL_TOL = 1e-4
LATTICE_TOL = 1e-12
STREAK_IOU_FLOOR = 0.5
BANDING_IOU_FLOOR = 0.6
NR_BACKGROUND_FLOOR = 0.95
NR_STREAK_ROW_FLOOR = 0.8

CHECKS = {}


def criterion(number, title):
    def register(fn):
        CHECKS[number] = (title, fn)
        return fn
    return register


def random_model(rng):
    c = rng.uniform(-0.01, 0.01, size=(3, 16))
    c[:, 0] = 0.15 + rng.uniform(-0.01, 0.01, 3)
    for ch in range(3):
        c[ch, 3 + ch] = 0.7 + rng.uniform(-0.01, 0.01)
    return PrintScanModel(c)


@criterion(1, "print-scan coefficient recovery")
def check_recovery():
    src = diverse_image(512, 512, seed=2024)
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        truth = random_model(rng)
        model, _ = fit_printscan(src, apply_printscan(src, truth), samples=10_000)
        worst = max(worst, float(np.abs(model.coeffs - truth.coeffs).max()))
    seconds = time.perf_counter() - t0
    return worst <= COEFF_TOL and seconds < FIT_SECONDS, f"max coeff error {worst:.2e}, {seconds:.2f} s"


@criterion(2, "identity fit")
def check_identity():
    src = diverse_image(512, 512, seed=7)
    model, report = fit_printscan(src, src, samples=10_000)
    err = float(np.abs(model.coeffs - PrintScanModel.identity().coeffs).max())
    rmse = float(report.rmse.max())
    return err <= COEFF_TOL and rmse < IDENTITY_RMSE, f"max coeff error {err:.2e}, rmse {rmse:.2e}"


def brute_force_miou(pred, gt, c):
    vals = []
    for k in range(c):
        p = {(i, j) for i, j in zip(*np.nonzero(pred == k))}
        g = {(i, j) for i, j in zip(*np.nonzero(gt == k))}
        if p | g:
            vals.append(len(p & g) / len(p | g))
    return sum(vals) / len(vals)


@criterion(3, "mIoU brute-force equivalence")
def check_miou_bruteforce():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        gt = rng.integers(0, 3, size=(32, 32))
        pred = np.where(rng.random((32, 32)) < rng.random(), gt, rng.integers(0, 3, size=(32, 32)))
        if iou(confusion(pred, gt, 3))[1] != brute_force_miou(pred, gt, 3):
            mismatches += 1
    return mismatches == 0, f"{mismatches} of 100 pairs differ"


@criterion(4, "2x2 hand fixture")
def check_hand_fixture():
    _, miou = iou(confusion(np.array([[1, 0], [0, 0]]), np.array([[1, 1], [0, 0]]), 2))
    return abs(miou - HAND_MIOU) <= HAND_TOL, f"mIoU {miou:.12f}"


def blocky_mask(w, h, seed):
    rng = np.random.default_rng(seed)
    m = np.zeros((h, w), np.uint8)
    for _ in range(25):
        x, y = rng.integers(0, w), rng.integers(0, h)
        m[y:y + rng.integers(1, h // 3 + 2), x:x + rng.integers(1, w // 3 + 2)] = rng.integers(1, 6)
    return m


@criterion(5, "stitching identity with the oracle")
def check_stitching():
    bad = []
    for w, h in ((300, 300), (513, 513), (600, 600), (1920, 1080)):
        gt = blocky_mask(w, h, w * h)
        if not np.array_equal(infer_patches(np.zeros((h, w, 3)), oracle_segmenter(gt)), gt):
            bad.append(f"{w}x{h}")
    return not bad, "all sizes exact" if not bad else f"differs at {bad}"


@criterion(6, "mask consistency at native resolution")
def check_mask_consistency():
    cfg = GenConfig(size=(640, 480), p_defective=1.0, streak_amplitude=(AMPLITUDE_FLOOR, 0.9),
                    band_amplitude=(AMPLITUDE_FLOOR, 0.3))
    total = None
    for i in range(50):
        native = synthesize_native(photo_like(640, 480, 500 + i), None, cfg, derive_seed(6, i))
        stats = mask_consistency(native)
        total = stats if total is None else total + stats
    ok = total.changed_unlabeled == 0 and total.outside_changed == 0 and total.visible_fraction >= VISIBLE_FLOOR
    return ok, (f"unlabeled changes {total.changed_unlabeled}, outside changes {total.outside_changed}, "
                f"visible fraction {total.visible_fraction:.4f}")


@criterion(7, "scenario statistics")
def check_scenarios():
    cfg = GenConfig(p_defective=P_DEFECTIVE)
    hits = sum(sample_scenario(np.random.default_rng(derive_seed(77, i)), cfg, 1920, 1080).defective
               for i in range(10_000))
    frac = hits / 10_000
    return abs(frac - P_DEFECTIVE) <= P_DEFECTIVE_TOL, f"defective fraction {frac:.4f}"


@criterion(8, "loss value and gradient")
def check_loss():
    loss = weighted_cross_entropy(np.zeros((1, 1, 3)), np.zeros((1, 1), int))
    value_ok = abs(loss - 0.05 * math.log(3)) <= LOSS_TOL
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        s = rng.normal(size=(4, 4, 3))
        gt = rng.integers(0, 3, size=(4, 4))
        g = loss_gradient(s, gt)
        fd = np.zeros_like(s)
        for idx in np.ndindex(s.shape):
            up, dn = s.copy(), s.copy()
            up[idx] += FD_STEP
            dn[idx] -= FD_STEP
            fd[idx] = (weighted_cross_entropy(up, gt) - weighted_cross_entropy(dn, gt)) / (2 * FD_STEP)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    return value_ok and worst < FD_REL_TOL, f"loss {loss:.12f}, worst gradient rel. error {worst:.2e}"


@criterion(9, "Perlin properties")
def check_perlin():
    f1 = PerlinField(seed=99, cell_size=8.0, octaves=1)
    k = np.arange(-8, 64) * 8.0
    X, Y = np.meshgrid(k, k)
    zeros = float(np.abs(perlin2d(f1, X, Y)).max())
    rng = np.random.default_rng(9)
    v = perlin2d(f1, rng.uniform(-500, 500, 10_000), rng.uniform(-500, 500, 10_000))
    bounded = v.min() >= -1.0 and v.max() <= 1.0
    f3 = PerlinField(seed=99, cell_size=8.0, octaves=3)
    a = perlin_grid(f3, 200, 150).tobytes()
    same = a == perlin_grid(f3, 200, 150).tobytes() and all(
        perlin_grid(f3, 200, 150, workers=w).tobytes() == a for w in (2, 4, 7))
    ok = zeros < LATTICE_TOL and bounded and same
    return ok, f"lattice max {zeros:.1e}, range [{v.min():.3f}, {v.max():.3f}], deterministic {same}"


def baseline_fixture():
    cfg = GenConfig(size=(640, 480), p_defective=1.0, p_streak=0.5, defect_count=(1, 3),
                    streak_amplitude=(0.6, 1.0), band_amplitude=(0.3, 0.6), class_scheme="collapsed")
    for i in range(20):
        yield synthesize_native(photo_like(640, 480, 1000 + i), None, cfg, derive_seed(7, i))


@criterion(10, "baseline detection floors")
def check_baselines():
    conf = np.zeros((3, 3), np.int64)
    fr = FRDiffSegmenter("collapsed")
    for native in baseline_fixture():
        conf += confusion(infer_patches(build_stack(native.defective, native.clean), fr), native.mask, 3)
    per_class, _ = iou(conf)
    nr = NRProjectionSegmenter("collapsed")
    bg = min(float((infer_patches(photo_like(640, 480, 2000 + i), nr) == 0).mean()) for i in range(20))
    streak_cfg = GenConfig(size=(640, 480), p_defective=1.0, p_streak=1.0, banding_shares=(0, 0, 0, 0),
                           defect_count=(1, 3), streak_amplitude=(0.6, 1.0))
    hit = total = 0
    for i in range(20):
        native = synthesize_native(photo_like(640, 480, 3000 + i), None, streak_cfg, derive_seed(9, i))
        flagged = infer_patches(native.defective, nr) != 0
        for s in native.specs:
            r = s.region
            lines = flagged[r.y:r.y + r.h].mean(axis=1) if s.orientation.value == "horizontal" \
                else flagged[:, r.x:r.x + r.w].mean(axis=0)
            hit += int((lines > 0.5).sum())
            total += len(lines)
    recall = hit / total
    ok = (per_class[1] >= STREAK_IOU_FLOOR and per_class[2] >= BANDING_IOU_FLOOR
          and bg >= NR_BACKGROUND_FLOOR and recall >= NR_STREAK_ROW_FLOOR)
    return ok, (f"FR streak IoU {per_class[1]:.3f}, FR banding IoU {per_class[2]:.3f}, "
                f"NR min background {bg:.3f}, NR streak rows {recall:.3f}")


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


@criterion(11, "end-to-end determinism")
def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "src").mkdir()
        for i in range(2):
            imgio.write_rgb(tmp / "src" / f"p{i}.png", photo_like(240, 180, 40 + i))
        cfg = tmp / "cfg.json"
        cfg.write_text('{"gen": {"size": [200, 150], "streak_width": [2, 6], "band_width": [8, 40]}}')
        digests = []
        for name in ("a", "b"):
            code = cli_main(["gen-dataset", "--src-dir", str(tmp / "src"), "--out-dir", str(tmp / name),
                             "--config", str(cfg), "--seed", "17", "--count", "4"])
            if code != 0:
                return False, f"gen-dataset exited {code}"
            digests.append(tree_digest(tmp / name))
    return digests[0] == digests[1], f"tree digest {digests[0][:16]}"


@criterion(12, "augmentation group laws")
def check_augment():
    rng = np.random.default_rng(12)
    failures = 0
    for _ in range(200):
        h, w, c = rng.integers(1, 20), rng.integers(1, 20), rng.choice([3, 6])
        img = rng.uniform(size=(h, w, c))
        mask = rng.integers(0, 6, size=(h, w)).astype(np.uint8)
        a, b = augment(*augment(img, mask, "hflip"), "hflip")
        ok = np.array_equal(a, img) and np.array_equal(b, mask)
        a, b = augment(*augment(img, mask, "rot90cw"), "rot90ccw")
        ok = ok and np.array_equal(a, img) and np.array_equal(b, mask)
        failures += not ok
    return failures == 0, f"{failures} of 200 rasters break a law"


def run(number):
    title, fn = CHECKS[number]
    ok, detail = fn()
    print(f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({title}): {detail}")
    return ok


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number):
    assert run(number)


if __name__ == "__main__":
    results = [run(n) for n in sorted(CHECKS)]
    print(f"{sum(results)} of {len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
