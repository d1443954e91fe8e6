import math

import numpy as np
import pytest

from mushroom_rgbd.detection import CircleDetection
from mushroom_rgbd.errors import ShapeMismatch
from mushroom_rgbd.evaluation import match_detections
from mushroom_rgbd.io import dumps
from mushroom_rgbd.localization import CameraIntrinsics, DepthFrame, localize
from mushroom_rgbd.pipeline import (
    MushroomReport,
    PipelineConfig,
    circle_contrast,
    crop_sample_cloud,
    default_cap_model,
    detect_caps,
    model_radius,
    report_document,
    run_pipeline,
    run_pipeline_detailed,
    scale_model,
)
from mushroom_rgbd.registration import PointCloud
from mushroom_rgbd.synthetic import CapSpec, SceneSpec, random_scene_spec, render_scene


@pytest.fixture(scope="module")
def five_cap_scene():
    K = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0)
    spec = random_scene_spec(np.random.default_rng(7), K, 5, noise_sigma=5.0, depth_noise_sigma=0.0005, seed=7)
    scene = render_scene(spec, K)
    return scene, run_pipeline_detailed(scene.rgb, scene.depth, K)


def test_five_caps_all_reported(five_cap_scene):
    scene, (reports, rejects, dets) = five_cap_scene
    assert len(reports) == 5 and rejects == []
    m = match_detections(dets, scene.gt_circles)
    assert m.recall == 1.0 and m.precision == 1.0


def test_reports_are_consistent(five_cap_scene):
    scene, (reports, rejects, dets) = five_cap_scene
    assert len(reports) + len(rejects) == len(dets)
    for r in reports:
        assert r.distance_m == pytest.approx(math.sqrt(sum(c * c for c in r.position_m)), abs=1e-9)
        assert np.linalg.norm(r.quaternion_xyzw) == pytest.approx(1.0, abs=1e-9)
        assert r.quaternion_xyzw[3] >= 0
        assert np.linalg.norm(r.cap_normal) == pytest.approx(1.0, abs=1e-9)
        assert 0.0 <= r.pose_fitness <= 1.0
    assert [r.id for r in reports] == sorted(r.id for r in reports)


def test_diameters_match_ground_truth(five_cap_scene):
    scene, (reports, _, dets) = five_cap_scene
    m = match_detections(dets, scene.gt_circles)
    by_id = {r.id: r for r in reports}
    for i, j, _ in m.matches:
        assert by_id[i].diameter_m == pytest.approx(scene.gt_locations[j].diameter_m, abs=0.003)


def test_report_round_trip(five_cap_scene):
    _, (reports, _, _) = five_cap_scene
    for r in reports:
        assert MushroomReport.from_dict(r.to_dict()) == r


def test_pipeline_is_deterministic(five_cap_scene, K):
    scene, (reports, rejects, dets) = five_cap_scene
    again = run_pipeline_detailed(scene.rgb, scene.depth, K)
    assert dumps(report_document(*again)) == dumps(report_document(reports, rejects, dets))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("noise", [0.0, 5.0, 20.0])
def test_empty_scene(K, seed, noise):
    scene = render_scene(SceneSpec(plane_depth=0.55, noise_sigma=noise, seed=seed), K)
    assert run_pipeline(scene.rgb, scene.depth, K) == ([], [])


def test_single_cap_in_heavy_noise(K):
    spec = SceneSpec(plane_depth=0.55, caps=[CapSpec((0.03, -0.02, 0.45), 0.015)], noise_sigma=30.0, seed=4)
    scene = render_scene(spec, K)
    dets = detect_caps(scene.rgb)
    m = match_detections(dets, scene.gt_circles)
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_circle_contrast(rng):
    img = 60.0 + rng.normal(0, 10, (100, 100))
    yy, xx = np.mgrid[0:100, 0:100]
    img[np.hypot(xx - 50, yy - 50) <= 20] += 100
    assert circle_contrast(img, CircleDetection(50, 50, 20, 1.0)) == pytest.approx(10.0, rel=0.15)
    assert circle_contrast(img, CircleDetection(20, 80, 10, 1.0)) < 1.0
    flat = np.full((40, 40), 7.0)
    assert circle_contrast(flat, CircleDetection(20, 20, 8, 1.0)) == 0.0
    flat[np.hypot(*np.mgrid[-20:20, -20:20]) <= 8] = 9.0
    assert circle_contrast(flat, CircleDetection(20, 20, 8, 1.0)) == math.inf


def test_uniform_frame_is_empty(K):
    rgb = np.full((480, 640, 3), 90, np.uint8)
    assert run_pipeline(rgb, DepthFrame(np.full((480, 640), 500, np.uint16)), K) == ([], [])


def test_fully_holed_cap_is_rejected_not_fatal(K):
    caps = [CapSpec(((u - 320) * 0.45 / 600, 0.0, 0.45), 0.02) for u in (120, 320, 520)]
    u_hole = 320.0
    spec = SceneSpec(plane_depth=0.55, caps=caps, noise_sigma=3.0, hole_disks=[(u_hole, 240.0, 40.0)], seed=2)
    scene = render_scene(spec, K)
    reports, rejects, dets = run_pipeline_detailed(scene.rgb, scene.depth, K)
    assert len(dets) == 3 and len(reports) == 2 and len(rejects) == 1
    assert rejects[0].reason == "MissingDepth" and rejects[0].stage == "localize"
    assert abs(rejects[0].detection.cx - u_hole) < 2


def test_partially_holed_cap_uses_fill(K):
    cap = CapSpec((0.0, 0.0, 0.45), 0.02)
    spec = SceneSpec(plane_depth=0.55, caps=[cap], noise_sigma=3.0, hole_disks=[(320.0, 240.0, 5.0)], seed=2)
    scene = render_scene(spec, K)
    reports, rejects = run_pipeline(scene.rgb, scene.depth, K)
    assert len(reports) == 1 and reports[0].fill_used


def test_mismatched_frames_raise(K):
    with pytest.raises(ShapeMismatch):
        run_pipeline(np.zeros((10, 10, 3), np.uint8), DepthFrame(np.zeros((10, 11), np.uint16)), K)
    with pytest.raises(ShapeMismatch):
        run_pipeline(np.zeros((10, 10)), DepthFrame(np.zeros((10, 10), np.uint16)), K)


def test_crop_excludes_bed_and_far_pixels(K):
    scene = render_scene(SceneSpec(plane_depth=0.55, caps=[CapSpec((0.0, 0.0, 0.45), 0.02)]), K)
    g = scene.gt_circles[0]
    loc = localize([CircleDetection(g.cx, g.cy, g.r, 1.0)], scene.depth, K)[0][0]
    cloud = crop_sample_cloud(scene.depth, K, loc, 1.2)
    # every kept point lies on the cap sphere, none on the bed 10 cm behind
    d = np.linalg.norm(cloud.points - np.array([0.0, 0.0, 0.45]), axis=1)
    assert len(cloud) > 1000 and np.all(np.abs(d - 0.02) < 0.002)


def test_model_helpers():
    model, up = default_cap_model()
    assert np.array_equal(up, [0.0, 0.0, -1.0])
    assert (model.points[:, 2] <= 1e-12).all()
    assert model_radius(model, up) == pytest.approx(0.02, rel=0.005)
    big = scale_model(model, 2.0)
    assert model_radius(big, up) == pytest.approx(2 * model_radius(model, up), rel=1e-12)


def test_config_round_trip_and_validation():
    cfg = PipelineConfig(crop_factor=1.5, model_up=(0.0, 0.0, 1.0))
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        PipelineConfig(crop_factor=0.5)
    with pytest.raises(ValueError):
        PipelineConfig(min_contrast=-1.0)
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"pose": {"voxel": 0.002, "nope": 3}})
