"""Synthetic RGB-D scenes of hemispherical caps on a planar bed, with exact ground truth."""

from dataclasses import dataclass, field
import math

import numpy as np

from .detection import CircleDetection
from .errors import CapBehindPlane
from .evaluation import GroundTruthCircle
from .localization import CameraIntrinsics, DepthFrame, MushroomLocation, sensor_distance
from .registration import PointCloud

# the cap axis points from the sphere centre towards the camera
CAMERA_FACING_AXIS = np.array([0.0, 0.0, -1.0])


@dataclass
class CapSpec:
    center: tuple
    radius: float
    tilt: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = tuple(float(c) for c in self.center)
        self.tilt = np.asarray(self.tilt, dtype=np.float64).reshape(3, 3)
        if self.radius <= 0:
            raise ValueError("cap radius must be positive")

    @property
    def axis(self):
        return self.tilt @ CAMERA_FACING_AXIS

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius, "tilt": self.tilt.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["center"], float(d["radius"]), np.asarray(d.get("tilt", np.eye(3))))


@dataclass
class SceneSpec:
    plane_depth: float
    caps: list = field(default_factory=list)
    fg_intensity: float = 200.0
    bg_intensity: float = 60.0
    noise_sigma: float = 0.0
    depth_noise_sigma: float = 0.0
    hole_prob: float = 0.0
    hole_disks: list = field(default_factory=list)  # (u, v, r) in pixels
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hole_prob <= 1.0:
            raise ValueError("hole_prob must lie in [0, 1]")
        if self.plane_depth <= 0:
            raise ValueError("plane depth must be positive")
        self.caps = [c if isinstance(c, CapSpec) else CapSpec.from_dict(c) for c in self.caps]

    def to_dict(self):
        return {
            "plane_depth": self.plane_depth,
            "caps": [c.to_dict() for c in self.caps],
            "fg_intensity": self.fg_intensity,
            "bg_intensity": self.bg_intensity,
            "noise_sigma": self.noise_sigma,
            "depth_noise_sigma": self.depth_noise_sigma,
            "hole_prob": self.hole_prob,
            "hole_disks": [list(h) for h in self.hole_disks],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            plane_depth=float(d["plane_depth"]),
            caps=[CapSpec.from_dict(c) for c in d.get("caps", [])],
            fg_intensity=float(d.get("fg_intensity", 200.0)),
            bg_intensity=float(d.get("bg_intensity", 60.0)),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            depth_noise_sigma=float(d.get("depth_noise_sigma", 0.0)),
            hole_prob=float(d.get("hole_prob", 0.0)),
            hole_disks=[tuple(h) for h in d.get("hole_disks", [])],
            seed=int(d.get("seed", 0)),
        )


@dataclass
class SyntheticScene:
    rgb: np.ndarray
    depth: DepthFrame
    intrinsics: CameraIntrinsics
    gt_circles: list
    gt_locations: list
    gt_normals: list


def projected_outline(center, radius, K):
    """On-axis image circle ``(u, v, r)`` of a sphere seen through the pinhole.

    ``r`` is the tangent-cone radius ``fx * R / sqrt(D^2 - R^2)``.  This is
    exact only on the optical axis; off-axis spheres image as ellipses
    stretched away from the principal point, see :func:`silhouette_circle`.
    """
    c = np.asarray(center, dtype=np.float64)
    D = np.linalg.norm(c)
    u = K.fx * c[0] / c[2] + K.cx
    v = K.fy * c[1] / c[2] + K.cy
    r = K.fx * radius / math.sqrt(D * D - radius * radius)
    return u, v, r


def _pixel_rays(u, v, K):
    dirs = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def silhouette_circle(cap, K, supersample=8):
    """Centroid and equal-area radius ``(u, v, r)`` of the cap's exact silhouette.

    The silhouette is ray-cast on a ``supersample`` x ``supersample`` grid
    per pixel.  On the optical axis this reproduces
    :func:`projected_outline`; off axis it is the circle a detector fitting
    the stretched outline should recover.
    """
    u0, v0, r0 = projected_outline(cap.center, cap.radius, K)
    # the off-axis stretch is 1 / cos^2 of the view angle at most
    half = 1.5 * r0 * (1.0 + ((u0 - K.cx) / K.fx) ** 2 + ((v0 - K.cy) / K.fy) ** 2) + 2.0
    s = int(supersample)
    step = 1.0 / s
    us = np.arange(math.floor(u0 - half), math.ceil(u0 + half) + 1, step) + 0.5 * step - 0.5
    vs = np.arange(math.floor(v0 - half), math.ceil(v0 + half) + 1, step) + 0.5 * step - 0.5
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    hit = np.isfinite(_ray_cap_depth(_pixel_rays(uu, vv, K), cap)).reshape(uu.shape)
    n = int(hit.sum())
    if n == 0:
        raise CapBehindPlane("cap is not visible")
    area = n * step * step
    return float(uu[hit].mean()), float(vv[hit].mean()), math.sqrt(area / math.pi)


def _ray_cap_depth(rays, cap):
    """Depth of the first camera-facing cap-surface hit along each unit ray (inf if none)."""
    c = np.asarray(cap.center)
    b = rays @ c
    disc = b * b - (c @ c - cap.radius**2)
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    best = np.full(len(rays), np.inf)
    axis = cap.axis
    for t in (b - sq, b + sq):
        p = rays * t[:, None]
        on_cap = hit & (t > 0) & (((p - c) @ axis) >= 0) & np.isinf(best)
        best = np.where(on_cap, p[:, 2], best)
    return best


def render_scene(spec, K):
    """Ray-cast ``spec`` through intrinsics ``K``.

    Depth is the nearest hit quantised by ``K.depth_scale``, then Gaussian
    depth noise, random drop-outs and hole disks are applied.  RGB is
    ``fg_intensity`` on caps and ``bg_intensity`` on the bed plus Gaussian
    intensity noise.
    """
    for cap in spec.caps:
        if cap.center[2] + cap.radius >= spec.plane_depth:
            raise CapBehindPlane(f"cap at depth {cap.center[2]} crosses the plane at {spec.plane_depth}")
        if cap.center[2] - cap.radius <= 0:
            raise CapBehindPlane("cap intersects the camera plane")
    h, w = K.height, K.width
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    rays = _pixel_rays(uu, vv, K)

    depth = np.full(h * w, spec.plane_depth)
    on_cap = np.zeros(h * w, dtype=bool)
    for cap in spec.caps:
        z = _ray_cap_depth(rays, cap)
        closer = z < depth
        depth = np.where(closer, z, depth)
        on_cap |= closer
    depth = depth.reshape(h, w)
    on_cap = on_cap.reshape(h, w)

    rng = np.random.default_rng(spec.seed)
    intensity = np.where(on_cap, spec.fg_intensity, spec.bg_intensity).astype(np.float64)
    if spec.noise_sigma > 0:
        intensity = intensity + rng.normal(0.0, spec.noise_sigma, intensity.shape)
    gray = np.clip(np.round(intensity), 0, 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)

    if spec.depth_noise_sigma > 0:
        depth = depth + rng.normal(0.0, spec.depth_noise_sigma, depth.shape)
    raw = np.clip(np.round(depth / K.depth_scale), 0, 65535).astype(np.uint16)
    if spec.hole_prob > 0:
        raw[rng.random(raw.shape) < spec.hole_prob] = 0
    for hu, hv, hr in spec.hole_disks:
        raw[np.hypot(uu - hu, vv - hv) <= hr] = 0

    gt_circles, gt_locations, gt_normals = [], [], []
    for i, cap in enumerate(spec.caps):
        u, v, r = silhouette_circle(cap, K)
        gt_circles.append(GroundTruthCircle(u, v, r, i))
        apex = tuple(float(x) for x in np.asarray(cap.center) + cap.radius * cap.axis)
        gt_locations.append(MushroomLocation(
            circle=CircleDetection(u, v, r, 1.0),
            position=apex,
            distance_m=sensor_distance(apex),
            diameter_m=2.0 * cap.radius,
            fill_used=False,
        ))
        gt_normals.append(cap.axis.copy())
    return SyntheticScene(rgb, DepthFrame(raw, K.depth_scale), K, gt_circles, gt_locations, gt_normals)


def sample_cap_cloud(radius, n, transform=None, noise_sigma=0.0, seed=0):
    """``n`` area-uniform points on the upper hemisphere (apex at ``+z * radius``)."""
    if n < 10:
        raise ValueError("need at least 10 points")
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.0, radius, n)
    az = rng.uniform(0.0, 2.0 * np.pi, n)
    rho = np.sqrt(np.maximum(radius * radius - z * z, 0.0))
    pts = np.stack([rho * np.cos(az), rho * np.sin(az), z], axis=1)
    if transform is not None:
        pts = transform.apply(pts)
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    return PointCloud(pts)


def random_scene_spec(rng, K, n_caps, plane_depth=0.55, cap_depth=(0.42, 0.5),
                      px_radius=(9.0, 36.0), gap_px=6.0, margin_px=4.0, **kwargs):
    """Place ``n_caps`` untilted caps with silhouette radii in ``px_radius`` and no overlap."""
    caps, circles = [], []
    tries = 0
    while len(caps) < n_caps:
        tries += 1
        if tries > 5000:
            raise RuntimeError("could not place caps without overlap")
        z = rng.uniform(*cap_depth)
        r_px = rng.uniform(*px_radius)
        radius = r_px * z / K.fx
        if z + radius >= plane_depth - 0.005:
            continue
        u = rng.uniform(r_px + margin_px, K.width - r_px - margin_px)
        v = rng.uniform(r_px + margin_px, K.height - r_px - margin_px)
        centre = ((u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z)
        cu, cv, cr = projected_outline(centre, radius, K)
        # off axis the outline stretches to about r / cos^2 radially and
        # r / cos tangentially (cos of the view angle)
        sec2 = 1.0 + ((cu - K.cx) / K.fx) ** 2 + ((cv - K.cy) / K.fy) ** 2
        if not px_radius[0] <= cr * sec2 ** 0.75 <= px_radius[1]:
            continue
        cr *= sec2
        if any(math.hypot(cu - a, cv - b) < cr + rb + gap_px for a, b, rb in circles):
            continue
        caps.append(CapSpec(centre, radius))
        circles.append((cu, cv, cr))
    return SceneSpec(plane_depth=plane_depth, caps=caps, **kwargs)
