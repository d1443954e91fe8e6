import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mushroom_rgbd.errors import CapBehindPlane
from mushroom_rgbd.localization import CameraIntrinsics, deproject
from mushroom_rgbd.registration import RigidTransform, axis_angle_matrix
from mushroom_rgbd.synthetic import (
    CapSpec,
    SceneSpec,
    projected_outline,
    random_scene_spec,
    render_scene,
    sample_cap_cloud,
    silhouette_circle,
)
from oracles import half_ball_silhouette, hemisphere_mean_z


def single_cap_spec(**kw):
    return SceneSpec(plane_depth=0.43, caps=[CapSpec((0.0, 0.0, 0.4), 0.02)], **kw)


# rendering


def test_single_cap_apex_depth_and_outline(K):
    scene = render_scene(single_cap_spec(), K)
    assert scene.depth.data[240, 320] * K.depth_scale == pytest.approx(0.380, abs=K.depth_scale)
    g = scene.gt_circles[0]
    # tangent cone of the sphere: fx R / sqrt(D^2 - R^2)
    assert g.r == pytest.approx(600 * 0.02 / math.sqrt(0.4**2 - 0.02**2), abs=0.01)
    assert (g.cx, g.cy) == pytest.approx((320.0, 240.0), abs=1e-9)


def test_bed_depth_and_intensities(K):
    scene = render_scene(single_cap_spec(), K)
    assert scene.depth.data[10, 10] == 430
    assert scene.rgb[240, 320, 0] == 200 and scene.rgb[10, 10, 0] == 60


def test_hole_disk_zeroes_exactly_the_disk(K):
    clean = render_scene(single_cap_spec(), K)
    holed = render_scene(single_cap_spec(hole_disks=[(320.0, 240.0, 5.0)]), K)
    vv, uu = np.mgrid[0:480, 0:640]
    inside = np.hypot(uu - 320, vv - 240) <= 5
    assert not holed.depth.data[inside].any()
    assert np.array_equal(holed.depth.data[~inside], clean.depth.data[~inside])
    assert np.array_equal(holed.rgb, clean.rgb)


def test_five_cap_scene_is_deterministic(K):
    spec = random_scene_spec(np.random.default_rng(4), K, 5, noise_sigma=5.0, depth_noise_sigma=0.001,
                             hole_prob=0.02, seed=9)
    a, b = render_scene(spec, K), render_scene(spec, K)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth.data, b.depth.data)
    assert a.gt_circles == b.gt_circles


def test_noise_and_holes_leave_ground_truth_and_rgb(K):
    spec = random_scene_spec(np.random.default_rng(2), K, 3)
    clean = render_scene(spec, K)
    spec.depth_noise_sigma, spec.hole_prob, spec.seed = 0.002, 0.3, 5
    noisy = render_scene(spec, K)
    assert noisy.gt_circles == clean.gt_circles
    assert [l.position for l in noisy.gt_locations] == [l.position for l in clean.gt_locations]
    assert np.array_equal(noisy.rgb, clean.rgb)


def test_cap_behind_plane_rejected(K):
    with pytest.raises(CapBehindPlane):
        render_scene(SceneSpec(plane_depth=0.41, caps=[CapSpec((0, 0, 0.4), 0.02)]), K)


def test_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        SceneSpec(plane_depth=0.5, hole_prob=1.5)
    with pytest.raises(ValueError):
        CapSpec((0, 0, 0.4), 0.0)
    spec = SceneSpec(plane_depth=0.5, caps=[CapSpec((0.01, 0, 0.4), 0.02, axis_angle_matrix((1, 0, 0), 0.2))],
                     hole_disks=[(3.0, 4.0, 2.0)], seed=3)
    again = SceneSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


def test_apex_pixel_deprojects_to_apex(K):
    spec = random_scene_spec(np.random.default_rng(11), K, 4)
    scene = render_scene(spec, K)
    for loc in scene.gt_locations:
        X, Y, Z = loc.position
        u, v = K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy
        # a whole-pixel centre near the apex; the dome is flat to first order there
        pu, pv = int(round(u)), int(round(v))
        z = scene.depth.data[pv, pu] * K.depth_scale
        p = deproject(pu, pv, z, K)
        assert p[2] == pytest.approx(Z, abs=K.depth_scale)
        assert math.dist(p[:2], (X, Y)) <= 0.5 * Z / K.fx * math.sqrt(2) + 1e-9


def test_on_axis_silhouette_matches_tangent_cone(K):
    cap = CapSpec((0.0, 0.0, 0.45), 0.025)
    u, v, r = silhouette_circle(cap, K)
    assert (u, v, r) == pytest.approx(projected_outline(cap.center, cap.radius, K), abs=0.01)


@settings(max_examples=15)
@given(st.floats(-0.2, 0.2), st.floats(-0.13, 0.13), st.floats(0.35, 0.6), st.floats(0.01, 0.03))
def test_silhouette_matches_convex_hull_oracle(x, y, z, r):
    K_ = dict(fx=600.0, fy=600.0, cx=320.0, cy=240.0)
    got = silhouette_circle(CapSpec((x, y, z), r), CameraIntrinsics(**K_))
    want = half_ball_silhouette((x, y, z), r, **K_)
    assert got == pytest.approx(want, abs=0.02)


def test_random_scene_respects_radius_range(K):
    rng = np.random.default_rng(0)
    for n in range(1, 9):
        scene = render_scene(random_scene_spec(rng, K, n), K)
        for g in scene.gt_circles:
            assert 8.0 <= g.r <= 38.0
        for i, a in enumerate(scene.gt_circles):
            for b in scene.gt_circles[i + 1:]:
                assert math.hypot(a.cx - b.cx, a.cy - b.cy) > a.r + b.r


# cap clouds


def test_cloud_on_upper_hemisphere():
    pts = sample_cap_cloud(0.02, 500, seed=3).points
    assert np.allclose(np.linalg.norm(pts, axis=1), 0.02, atol=1e-12)
    assert (pts[:, 2] >= 0).all()


def test_cloud_rotated_90_about_x():
    T = RigidTransform(axis_angle_matrix((1, 0, 0), math.pi / 2), np.zeros(3))
    pts = sample_cap_cloud(0.02, 500, T, seed=3).points
    assert (pts[:, 1] <= 1e-12).all()


def test_cloud_mean_height_matches_area_uniform_oracle():
    # default seed; the 1% band is about 1.7 standard errors at this n
    z = sample_cap_cloud(0.02, 10_000).points[:, 2].mean()
    mc = hemisphere_mean_z(0.02, 10**6, np.random.default_rng(1))
    assert z == pytest.approx(0.01, rel=0.01)
    assert z == pytest.approx(mc, rel=0.01)


def test_cloud_height_is_uniform():
    # area-uniform on a hemisphere means uniform height (equal-area zones)
    z = sample_cap_cloud(0.02, 5000, seed=6).points[:, 2] / 0.02
    assert stats.kstest(z, "uniform").pvalue > 0.01


def test_cloud_deterministic_and_noise_applied():
    a = sample_cap_cloud(0.02, 100, noise_sigma=0.001, seed=4).points
    b = sample_cap_cloud(0.02, 100, noise_sigma=0.001, seed=4).points
    assert np.array_equal(a, b)
    r = np.linalg.norm(a, axis=1)
    assert 0.0003 < np.std(r - 0.02) < 0.003
    with pytest.raises(ValueError):
        sample_cap_cloud(0.02, 5)
