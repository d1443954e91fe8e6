import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mushroom_rgbd.detection import CircleDetection
from mushroom_rgbd.errors import NoValidPixels, UndefinedScore
from mushroom_rgbd.evaluation import (
    GroundTruthCircle,
    circle_iou,
    depth_accuracy,
    f_score,
    match_detections,
)
from mushroom_rgbd.localization import DepthFrame
from oracles import hungarian_tp, iou_monte_carlo

circles = st.builds(
    lambda x, y, r: GroundTruthCircle(x, y, r),
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40),
)


def det(cx, cy, r, score=1.0):
    return CircleDetection(cx, cy, r, score)


# circle IoU


def test_identical_circles():
    a = GroundTruthCircle(3.0, 4.0, 7.0)
    assert circle_iou(a, a) == 1.0


def test_disjoint_circles():
    assert circle_iou(GroundTruthCircle(0, 0, 5), GroundTruthCircle(11, 0, 5)) == 0.0


def test_contained_circle_is_area_ratio():
    assert circle_iou(GroundTruthCircle(0, 0, 10), GroundTruthCircle(1, 1, 5)) == pytest.approx(0.25)


def test_offset_by_radius_matches_monte_carlo():
    a, b = GroundTruthCircle(0, 0, 10), GroundTruthCircle(10, 0, 10)
    mc = iou_monte_carlo((0, 0, 10), (10, 0, 10), 10**7, np.random.default_rng(7))
    assert circle_iou(a, b) == pytest.approx(0.243, abs=0.003)
    assert circle_iou(a, b) == pytest.approx(mc, abs=0.003)


def test_nonpositive_radius_rejected():
    with pytest.raises(ValueError):
        circle_iou(det(0, 0, 0), det(0, 0, 1))
    with pytest.raises(ValueError):
        GroundTruthCircle(0, 0, -1)


@given(circles, circles)
def test_iou_symmetric_and_bounded(a, b):
    v = circle_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(circle_iou(b, a), abs=1e-12)


@settings(max_examples=10)
@given(circles, circles, st.integers(0, 2**31 - 1))
def test_iou_matches_sampling(a, b, seed):
    mc = iou_monte_carlo((a.cx, a.cy, a.r), (b.cx, b.cy, b.r), 200_000, np.random.default_rng(seed))
    assert circle_iou(a, b) == pytest.approx(mc, abs=0.02)


# F-score


def test_fscore_examples():
    assert f_score(0.9929, 0.9899) == pytest.approx(0.9914, abs=1e-4)
    assert f_score(1.0, 1.0) == 1.0
    assert f_score(1.0, 0.5) == pytest.approx(2 / 3)


def test_fscore_undefined():
    with pytest.raises(UndefinedScore):
        f_score(0.0, 0.0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_fscore_harmonic_bounds(r, p):
    if r + p == 0:
        return
    f = f_score(r, p)
    assert min(r, p) - 1e-12 <= f <= max(r, p) + 1e-12


@given(st.floats(0.01, 1))
def test_fscore_equal_inputs(x):
    assert f_score(x, x) == pytest.approx(x, rel=1e-12)


# matching


def test_two_matched_one_missed():
    gts = [GroundTruthCircle(0, 0, 10, 0), GroundTruthCircle(50, 0, 10, 1), GroundTruthCircle(100, 0, 10, 2)]
    dets = [det(0.5, 0, 10, 0.9), det(50, 0.5, 10, 0.8)]
    m = match_detections(dets, gts)
    assert (m.tp, m.fp, m.fn) == (2, 0, 1)
    assert m.recall == pytest.approx(2 / 3) and m.precision == 1.0
    assert all(iou >= 0.9 for _, _, iou in m.matches)


def test_below_threshold_is_fp_and_fn():
    g = GroundTruthCircle(0, 0, 10)
    d = det(6.87, 0, 10)
    assert 0.35 < circle_iou(d, g) < 0.45
    m = match_detections([d], [g])
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)


def test_empty_conventions():
    m = match_detections([], [])
    assert (m.recall, m.precision) == (1.0, 1.0)
    m = match_detections([], [GroundTruthCircle(0, 0, 5)])
    assert (m.tp, m.fn, m.recall, m.precision) == (0, 1, 0.0, 1.0)
    m = match_detections([det(0, 0, 5)], [])
    assert (m.fp, m.recall, m.precision) == (1, 1.0, 0.0)
    assert m.fscore == 0.0


def test_higher_score_matches_first():
    g = GroundTruthCircle(0, 0, 10)
    m = match_detections([det(2, 0, 10, 0.5), det(0.5, 0, 10, 0.9)], [g])
    assert m.matches[0][0] == 1 and m.tp == 1 and m.fp == 1


def random_sets(rng):
    gts = [GroundTruthCircle(*rng.uniform(0, 100, 2), rng.uniform(5, 15), i) for i in range(rng.integers(0, 7))]
    dets = []
    for g in gts:
        if rng.random() < 0.8:
            dets.append(det(g.cx + rng.normal(0, 4), g.cy + rng.normal(0, 4), g.r * rng.uniform(0.7, 1.3), rng.random()))
    for _ in range(rng.integers(0, 3)):
        dets.append(det(*rng.uniform(0, 100, 2), rng.uniform(5, 15), rng.random()))
    return dets, gts


def test_greedy_against_optimal_assignment():
    rng = np.random.default_rng(2024)
    disagreements = 0
    for _ in range(50):
        dets, gts = random_sets(rng)
        m = match_detections(dets, gts)
        ious = np.array([[circle_iou(d, g) for g in gts] for d in dets]).reshape(len(dets), len(gts))
        best = hungarian_tp(ious, 0.5)
        assert m.tp <= best
        disagreements += m.tp != best
        assert m.tp + m.fn == len(gts) and m.tp + m.fp == len(dets)
    print(f"greedy vs optimal: {disagreements}/50 sets differ")
    assert disagreements <= 5


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_counts_partition_inputs(seed):
    dets, gts = random_sets(np.random.default_rng(seed))
    m = match_detections(dets, gts)
    assert m.tp + m.fn == len(gts)
    assert m.tp + m.fp == len(dets)
    assert 0 <= m.recall <= 1 and 0 <= m.precision <= 1
    assert len({j for _, j, _ in m.matches}) == m.tp


def test_metrics_dict():
    d = match_detections([det(0, 0, 5)], [GroundTruthCircle(0, 0, 5)]).to_dict()
    assert d["tp"] == 1 and d["fscore"] == 1.0 and d["matches"] == [[0, 0, 1.0]]


# depth accuracy


def test_uniform_frame_offset():
    frame = DepthFrame(np.full((480, 640), 7958, np.uint16), depth_scale=1e-4)
    s = depth_accuracy(frame, 0.7930)
    assert s.offset_m == pytest.approx(-0.0028, abs=1e-12)
    assert s.std_m == 0.0 and s.range_m == 0.0 and s.n_valid == 31 * 31


def test_exact_plane_zero_offset():
    s = depth_accuracy(DepthFrame(np.full((100, 120), 650, np.uint16)), 0.650)
    assert s.offset_m == pytest.approx(0.0, abs=1e-15)


def test_biased_quantized_plane():
    rng = np.random.default_rng(5)
    gt = 0.8123
    z = gt + 0.003 + rng.normal(0, 0.0008, (480, 640))
    s = depth_accuracy(DepthFrame(np.round(z * 1000).astype(np.uint16)), gt)
    assert s.offset_m == pytest.approx(-0.003, abs=0.0005)


def test_missing_pixels_skipped_and_all_missing_raises():
    data = np.full((64, 64), 500, np.uint16)
    data[32, 32] = 0
    assert depth_accuracy(DepthFrame(data), 0.5).n_valid == 31 * 31 - 1
    data[:] = 0
    with pytest.raises(NoValidPixels):
        depth_accuracy(DepthFrame(data), 0.5)


def test_window_validation():
    f = DepthFrame(np.full((20, 20), 500, np.uint16))
    with pytest.raises(ValueError):
        depth_accuracy(f, 0.5, window=4)
    with pytest.raises(ValueError):
        depth_accuracy(f, 0.5, window=31)


@given(st.integers(0, 2**31 - 1), st.integers(0, 2000))
def test_depth_shift_moves_offset_only(seed, delta):
    rng = np.random.default_rng(seed)
    data = rng.integers(400, 900, (40, 40)).astype(np.uint16)
    data[rng.random(data.shape) < 0.2] = 0
    data[20, 20] = 600
    a = depth_accuracy(DepthFrame(data), 0.7)
    shifted = np.where(data > 0, data + delta, 0).astype(np.uint16)
    b = depth_accuracy(DepthFrame(shifted), 0.7)
    assert b.offset_m == pytest.approx(a.offset_m - delta * 0.001, abs=1e-12)
    assert b.std_m == pytest.approx(a.std_m, abs=1e-12)
    assert b.range_m == pytest.approx(a.range_m, abs=1e-12)
    assert a.std_m >= 0 and a.range_m >= 0
