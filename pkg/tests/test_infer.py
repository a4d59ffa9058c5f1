import numpy as np
import pytest

from printdefect import imgio
from printdefect.defects import BandProfile, DefectSpec
from printdefect.errors import ChannelCountMismatch, RegionOutOfBounds, SegmenterFailure
from printdefect.imgcore import ClassScheme, Rect
from printdefect.infer import (
    FRDiffParams,
    FRDiffSegmenter,
    NRProjectionSegmenter,
    NRProjParams,
    ScoreMapSegmenter,
    Segmenter,
    argmax_labels,
    build_stack,
    external_segmenter,
    infer,
    infer_patches,
    infer_resized,
    make_segmenter,
    one_hot,
    oracle_segmenter,
    stitch_scores,
)
from printdefect.defects import apply_defects
from printdefect.evaluation import confusion, iou
from printdefect.sources import photo_like


class Constant(Segmenter):
    def __init__(self, values):
        super().__init__(ClassScheme.COLLAPSED)
        self.values = np.asarray(values, dtype=float)

    def _scores(self, stack, region):
        return np.broadcast_to(self.values, stack.shape[:2] + (3,)).copy()


class Counting(ScoreMapSegmenter):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.calls = []

    def _scores(self, stack, region):
        self.calls.append(region)
        return super()._scores(stack, region)


def blocky_mask(w, h, seed, classes=6):
    rng = np.random.default_rng(seed)
    m = np.zeros((h, w), np.uint8)
    for _ in range(12):
        x, y = rng.integers(0, w), rng.integers(0, h)
        m[y:y + rng.integers(1, h // 2 + 2), x:x + rng.integers(1, w // 2 + 2)] = rng.integers(1, classes)
    return m


def nearest_loop(m, ow, oh):
    h, w = m.shape
    out = np.empty((oh, ow), m.dtype)
    for i in range(oh):
        for j in range(ow):
            out[i, j] = m[min(int((i + 0.5) * h / oh), h - 1), min(int((j + 0.5) * w / ow), w - 1)]
    return out


def test_argmax_tie_lowest():
    s = np.array([[[0.3, 0.3, 0.1], [0.0, 0.5, 0.5]]])
    np.testing.assert_array_equal(argmax_labels(s), [[0, 1]])


def test_one_hot():
    oh = one_hot(np.array([[0, 2]]), 3)
    np.testing.assert_array_equal(oh, [[[1, 0, 0], [0, 0, 1]]])
    with pytest.raises(ValueError):
        one_hot(np.array([3]), 3)


# --- strategies ---------------------------------------------------------------

def test_resized_constant_background():
    out = infer_resized(np.zeros((200, 300, 3)), Constant([1.0, 0.0, 0.0]))
    assert out.shape == (200, 300) and not out.any()


@pytest.mark.parametrize("w,h", [(300, 200), (1920, 1080), (2000, 900)])
def test_resized_oracle_roundtrip(w, h):
    gt = blocky_mask(w, h, w)
    out = infer_resized(np.zeros((h, w, 3)), oracle_segmenter(gt))
    np.testing.assert_array_equal(out, nearest_loop(nearest_loop(gt, 1280, 720), w, h))


def test_resized_native_size_lossless():
    gt = blocky_mask(1280, 720, 3)
    np.testing.assert_array_equal(infer_resized(np.zeros((720, 1280, 3)), oracle_segmenter(gt)), gt)


def test_resized_orig_dims():
    out = infer_resized(np.zeros((100, 100, 3)), Constant([0, 1.0, 0]), orig_dims=(50, 40))
    assert out.shape == (40, 50) and np.all(out == 1)


def test_single_tile_matches_direct(rng):
    scores = rng.normal(size=(513, 513, 6))
    seg = ScoreMapSegmenter(scores)
    np.testing.assert_array_equal(infer_patches(np.zeros((513, 513, 3)), seg), argmax_labels(scores))


@pytest.mark.parametrize("w,h", [(300, 300), (513, 513), (600, 600), (1920, 1080)])
def test_patch_oracle_identity(w, h):
    gt = blocky_mask(w, h, h)
    np.testing.assert_array_equal(infer_patches(np.zeros((h, w, 3)), oracle_segmenter(gt)), gt)


def test_stitching_restriction_of_full_map(rng):
    scores = rng.normal(size=(700, 1100, 3))
    seg = Counting(scores, ClassScheme.COLLAPSED)
    stitched = stitch_scores(np.zeros((700, 1100, 3)), seg)
    np.testing.assert_array_equal(stitched, scores)
    assert len(seg.calls) == 6 and all(r.w == 513 and r.h == 513 for r in seg.calls)


def test_stitch_tie_goes_to_background():
    out = infer_patches(np.zeros((20, 20, 3)), Constant([0.2, 0.2, 0.2]))
    assert not out.any()


def test_patch_workers_invariant(rng):
    scores = rng.normal(size=(600, 1200, 6))
    stack = np.zeros((600, 1200, 3))
    a = stitch_scores(stack, ScoreMapSegmenter(scores), workers=1)
    b = stitch_scores(stack, ScoreMapSegmenter(scores), workers=4)
    assert a.tobytes() == b.tobytes()


def test_infer_dispatch():
    stack = np.zeros((40, 30, 3))
    for strategy in ("resized", "patch"):
        assert infer(stack, Constant([1, 0, 0]), strategy).shape == (40, 30)
    with pytest.raises(ValueError):
        infer(stack, Constant([1, 0, 0]), "sliding")


# --- segmenter contract ---------------------------------------------------------

class Broken(Segmenter):
    def __init__(self, result):
        super().__init__(ClassScheme.COLLAPSED)
        self.result = result

    def _scores(self, stack, region):
        return self.result(stack)


def test_segmenter_failures():
    with pytest.raises(SegmenterFailure):
        Broken(lambda s: np.zeros((2, 2, 3)))(np.zeros((4, 4, 3)))
    with pytest.raises(SegmenterFailure):
        Broken(lambda s: np.full(s.shape[:2] + (3,), np.nan))(np.zeros((4, 4, 3)))
    with pytest.raises(SegmenterFailure):
        infer_patches(np.zeros((4, 4, 3)), Broken(lambda s: np.zeros(s.shape[:2] + (2,))))


def test_channel_checks():
    with pytest.raises(ChannelCountMismatch):
        FRDiffSegmenter()(np.zeros((8, 8, 3)))
    with pytest.raises(ChannelCountMismatch):
        NRProjectionSegmenter()(np.zeros((8, 8, 6)))


def test_score_map_region_bounds():
    seg = oracle_segmenter(np.zeros((10, 10), np.uint8))
    with pytest.raises(RegionOutOfBounds):
        seg.segment(np.zeros((5, 5, 3)), Rect(8, 8, 5, 5))


def test_external_segmenter(tmp_path, rng):
    scores = rng.normal(size=(30, 40, 3)).astype(np.float32)
    imgio.write_tensor(tmp_path / "s.pdsm", scores)
    seg = external_segmenter(tmp_path / "s.pdsm", "collapsed")
    np.testing.assert_array_equal(infer_patches(np.zeros((30, 40, 3)), seg, patch=16), argmax_labels(scores))


def test_make_segmenter():
    assert isinstance(make_segmenter("frdiff"), FRDiffSegmenter)
    assert isinstance(make_segmenter("nrproj", "collapsed"), NRProjectionSegmenter)
    with pytest.raises(ValueError):
        make_segmenter("oracle")
    with pytest.raises(ValueError):
        make_segmenter("external")
    with pytest.raises(ValueError):
        make_segmenter("deeplab")


def test_build_stack_order(rng):
    ref, dfc = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
    s = build_stack(dfc, ref)
    assert np.array_equal(s[..., :3], ref) and np.array_equal(s[..., 3:], dfc)
    assert build_stack(dfc).shape == (4, 4, 3)


# --- full-reference baseline ---------------------------------------------------------

def _streak(region, orient="horizontal", amp=0.7):
    return DefectSpec("streak", orient, Rect(*region), amp, texture_seed=3, streak_color=0.05)


def _band(region, channel, amp=0.4, orient="horizontal"):
    r = Rect(*region)
    width = r.h if orient == "horizontal" else r.w
    mu1 = 0.2 * (width - 1)
    return DefectSpec("banding", orient, r, amp, channel=channel, sign="excess",
                      profile=BandProfile(mu1, width - 1 - mu1, 0.3 * width, amp))


def test_frdiff_identical_is_background():
    ref = photo_like(200, 150, 1)
    assert not infer_patches(build_stack(ref, ref), FRDiffSegmenter()).any()


def test_frdiff_tau_one_is_background():
    ref = photo_like(200, 150, 1)
    dfc = apply_defects(ref, [_streak((0, 50, 200, 6)), _band((0, 80, 200, 40), 1)])
    seg = FRDiffSegmenter(params=FRDiffParams(tau=1.0))
    assert not infer_patches(build_stack(dfc, ref), seg).any()


def test_frdiff_single_streak():
    ref = photo_like(320, 240, 2)
    spec = _streak((0, 100, 320, 7))
    dfc = apply_defects(ref, [spec])
    gt = np.zeros((240, 320), np.uint8)
    gt[spec.region.slices()] = 1
    pred = infer_patches(build_stack(dfc, ref), FRDiffSegmenter())
    per_class, _ = iou(confusion(pred, gt, 6))
    assert per_class[1] >= 0.5


@pytest.mark.parametrize("channel", range(4))
def test_frdiff_banding_channel(channel):
    ref = photo_like(320, 240, 3)
    spec = _band((100, 0, 60, 240), channel, orient="vertical")
    dfc = apply_defects(ref, [spec])
    pred = infer_patches(build_stack(dfc, ref), FRDiffSegmenter())
    rows, cols = spec.region.slices()
    labels, counts = np.unique(pred[rows, cols], return_counts=True)
    assert labels[counts.argmax()] == 2 + channel


def test_frdiff_streak_across_band():
    ref = photo_like(320, 240, 4)
    band = _band((0, 60, 320, 80), 0)
    line = _streak((150, 0, 6, 240), "vertical")
    dfc = apply_defects(ref, [band, line])
    pred = infer_patches(build_stack(dfc, ref), FRDiffSegmenter(ClassScheme.COLLAPSED))
    # The streak keeps its label where it crosses the band.
    assert np.mean(pred[70:130, 151:155] == 1) > 0.9


# --- no-reference baseline --------------------------------------------------------

def test_nrproj_constant_background():
    assert not infer_patches(np.full((120, 160, 3), 0.6), NRProjectionSegmenter()).any()


def test_nrproj_single_dark_row():
    img = np.full((120, 160, 3), 0.6)
    img[40] -= 0.3
    pred = infer_patches(img, NRProjectionSegmenter())
    np.testing.assert_array_equal(np.flatnonzero(pred.any(axis=1)), [40])
    assert np.all(pred[40] == 1)


def test_nrproj_wide_band_channel():
    img = np.full((200, 200, 3), 0.8)
    dfc = apply_defects(img, [_band((0, 60, 200, 40), channel=2, amp=0.5)])
    # The median window must span more than twice the band to see it.
    pred = infer_patches(dfc, NRProjectionSegmenter(params=NRProjParams(window=101)))
    labels, counts = np.unique(pred[70:90], return_counts=True)
    assert labels[counts.argmax()] == 4
    assert not pred[:50].any() and not pred[110:].any()


def test_baselines_pure():
    ref = photo_like(160, 120, 5)
    dfc = apply_defects(ref, [_streak((0, 30, 160, 4))])
    for seg, stack in ((FRDiffSegmenter(), build_stack(dfc, ref)), (NRProjectionSegmenter(), dfc)):
        assert seg(stack).tobytes() == seg(stack).tobytes()
