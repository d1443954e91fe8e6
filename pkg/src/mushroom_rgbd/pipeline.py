"""End-to-end frame processing: segmentation, circle detection, localization and pose."""

from dataclasses import asdict, dataclass, field, fields
import math

import numpy as np

from .detection import RadiusRange, detect_circles
from .errors import ConstantImage, EmptyCloud, PerceptionError, ShapeMismatch, StageError
from .imgcore import morphological_open, otsu_threshold, to_grayscale
from .localization import localize
from .registration import PointCloud, PoseParams, axis_angle_matrix, RigidTransform, estimate_pose
from .segmentation import ChanVeseParams, chan_vese_evolve
from .synthetic import sample_cap_cloud

# sensor-facing default model: a 20 mm hemisphere with its apex towards -z
DEFAULT_MODEL_RADIUS = 0.02
DEFAULT_MODEL_UP = (0.0, 0.0, -1.0)


def default_cap_model(radius=DEFAULT_MODEL_RADIUS, n=2000, seed=0):
    """Hemisphere model stored in the pose a downward-looking sensor sees caps in."""
    flip = RigidTransform(axis_angle_matrix([1.0, 0.0, 0.0], math.pi), np.zeros(3))
    return sample_cap_cloud(radius, n, transform=flip, seed=seed), np.array(DEFAULT_MODEL_UP)


def model_radius(model, up, n_dirs=16):
    """Half the model's width across the up axis, averaged over ``n_dirs`` directions.

    Widths do not depend on where the axis passes, so a sampled centroid
    that sits slightly off the true axis does not inflate the radius.
    """
    up = np.asarray(up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    e1 = np.cross(up, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(up, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    t = np.pi * np.arange(n_dirs) / n_dirs
    dirs = np.outer(np.cos(t), e1) + np.outer(np.sin(t), e2)
    proj = model.points @ dirs.T
    return float(0.5 * np.mean(proj.max(axis=0) - proj.min(axis=0)))


def scale_model(model, factor):
    """Model scaled by ``factor`` about its centroid."""
    c = model.points.mean(axis=0)
    return PointCloud(c + factor * (model.points - c))


def _from_dict(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} field(s): {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class PipelineConfig:
    chan_vese: ChanVeseParams = field(default_factory=ChanVeseParams)
    radius_range: RadiusRange = field(default_factory=RadiusRange)
    score_thresh: float = 0.45
    nms_dist: float = None
    smooth_sigma: float = 1.0
    pose: PoseParams = field(default_factory=PoseParams)
    model_path: str = None
    model_up: tuple = None
    crop_factor: float = 1.2
    # resize the model to each cap's measured diameter before registration
    scale_to_cap: bool = True
    # sample points deeper than the cap centre by more than this times the
    # diameter belong to the bed, not the cap
    depth_gate: float = 0.6
    # minimum grey-level contrast-to-noise of a detection against its
    # surroundings, see circle_contrast; 0 disables the check
    min_contrast: float = 2.0

    def __post_init__(self):
        if self.crop_factor < 1.0:
            raise ValueError("crop_factor must be at least 1")
        if not 0.0 < self.score_thresh <= 1.5:
            raise ValueError("score_thresh out of range")
        if self.depth_gate <= 0:
            raise ValueError("depth_gate must be positive")
        if self.min_contrast < 0:
            raise ValueError("min_contrast must be non-negative")

    def to_dict(self):
        return {
            "chan_vese": asdict(self.chan_vese),
            "radius_range": asdict(self.radius_range),
            "score_thresh": self.score_thresh,
            "nms_dist": self.nms_dist,
            "smooth_sigma": self.smooth_sigma,
            "pose": asdict(self.pose),
            "model_path": self.model_path,
            "model_up": None if self.model_up is None else list(self.model_up),
            "crop_factor": self.crop_factor,
            "scale_to_cap": self.scale_to_cap,
            "depth_gate": self.depth_gate,
            "min_contrast": self.min_contrast,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kw = {}
        if "chan_vese" in d:
            kw["chan_vese"] = _from_dict(ChanVeseParams, d.pop("chan_vese"))
        if "radius_range" in d:
            kw["radius_range"] = _from_dict(RadiusRange, d.pop("radius_range"))
        if "pose" in d:
            kw["pose"] = _from_dict(PoseParams, d.pop("pose"))
        if d.get("model_up") is not None:
            d["model_up"] = tuple(float(u) for u in d["model_up"])
        kw.update(d)
        return _from_dict(cls, kw)


@dataclass(frozen=True)
class MushroomReport:
    id: int
    center_px: tuple
    radius_px: float
    position_m: tuple
    distance_m: float
    diameter_m: float
    quaternion_xyzw: tuple
    cap_normal: tuple
    fill_used: bool
    pose_fitness: float

    def to_dict(self):
        return {
            "id": self.id,
            "center_px": list(self.center_px),
            "radius_px": self.radius_px,
            "position_m": list(self.position_m),
            "distance_m": self.distance_m,
            "diameter_m": self.diameter_m,
            "quaternion_xyzw": list(self.quaternion_xyzw),
            "cap_normal": list(self.cap_normal),
            "fill_used": self.fill_used,
            "pose_fitness": self.pose_fitness,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=int(d["id"]),
            center_px=tuple(float(v) for v in d["center_px"]),
            radius_px=float(d["radius_px"]),
            position_m=tuple(float(v) for v in d["position_m"]),
            distance_m=float(d["distance_m"]),
            diameter_m=float(d["diameter_m"]),
            quaternion_xyzw=tuple(float(v) for v in d["quaternion_xyzw"]),
            cap_normal=tuple(float(v) for v in d["cap_normal"]),
            fill_used=bool(d["fill_used"]),
            pose_fitness=float(d["pose_fitness"]),
        )


@dataclass(frozen=True)
class Reject:
    id: int
    detection: object
    stage: str
    reason: str
    message: str

    def to_dict(self):
        return {
            "id": self.id,
            "center_px": [self.detection.cx, self.detection.cy],
            "radius_px": self.detection.r,
            "stage": self.stage,
            "reason": self.reason,
            "message": self.message,
        }


def _segment_gray(gray, cfg):
    try:
        init, _ = otsu_threshold(gray)
        mask = chan_vese_evolve(gray, init, cfg.chan_vese)
    except ConstantImage:
        return np.zeros(gray.shape, dtype=bool)
    return morphological_open(mask)


def segment(rgb, cfg=None):
    """Foreground mask after grayscale, Otsu, Chan-Vese and the elliptical opening.

    A uniform frame has nothing to segment and yields an empty mask.
    """
    return _segment_gray(to_grayscale(rgb), cfg or PipelineConfig())


def _robust_sigma(x):
    return 1.4826 * float(np.median(np.abs(x - np.median(x))))


def circle_contrast(gray, det, inner=0.7, ring=(1.3, 1.6)):
    """Contrast-to-noise of a circle against its surroundings in a grey image.

    The median of the disk of radius ``inner * r`` is compared with the
    median of the ring ``ring[0] * r .. ring[1] * r``, relative to the pooled
    robust (MAD) spread of both.  Medians keep a neighbouring cap inside the
    ring from masking the difference.  Returns ``inf`` when the ring lies
    outside the frame, since the circle cannot be checked.
    """
    h, w = gray.shape
    R = int(math.ceil(ring[1] * det.r)) + 1
    x0, x1 = max(int(det.cx) - R, 0), min(int(det.cx) + R + 1, w)
    y0, y1 = max(int(det.cy) - R, 0), min(int(det.cy) + R + 1, h)
    vv, uu = np.mgrid[y0:y1, x0:x1]
    dist = np.hypot(uu - det.cx, vv - det.cy)
    patch = gray[y0:y1, x0:x1]
    a = patch[dist <= inner * det.r]
    b = patch[(dist >= ring[0] * det.r) & (dist <= ring[1] * det.r)]
    if a.size == 0 or b.size == 0:
        return math.inf
    diff = abs(float(np.median(a)) - float(np.median(b)))
    spread = math.sqrt(0.5 * (_robust_sigma(a) ** 2 + _robust_sigma(b) ** 2))
    if spread == 0:
        return math.inf if diff > 0 else 0.0
    return diff / spread


def detect_caps(rgb, cfg=None):
    """Circle detections (descending score) for an RGB frame.

    On a frame with little or no foreground, Chan-Vese partitions the noise
    and some blobs score as circles.  Those have grey-level contrast near
    the noise floor, so detections below ``cfg.min_contrast`` are dropped.
    """
    cfg = cfg or PipelineConfig()
    gray = to_grayscale(rgb)
    mask = _segment_gray(gray, cfg)
    dets = detect_circles(mask, cfg.radius_range, cfg.score_thresh, cfg.nms_dist, cfg.smooth_sigma)
    if cfg.min_contrast > 0:
        dets = [d for d in dets if circle_contrast(gray, d) >= cfg.min_contrast]
    return dets


def crop_sample_cloud(frame, K, location, crop_factor=1.2, depth_gate=0.6):
    """Deprojected valid pixels within ``crop_factor * r`` of the circle, minus the bed.

    Points more than ``depth_gate * diameter`` behind the cap centre are
    dropped: the visible cap spans only half its diameter in depth.
    """
    det = location.circle
    R = crop_factor * det.r
    x0, x1 = max(int(math.floor(det.cx - R)), 0), min(int(math.ceil(det.cx + R)), frame.width - 1)
    y0, y1 = max(int(math.floor(det.cy - R)), 0), min(int(math.ceil(det.cy + R)), frame.height - 1)
    vv, uu = np.mgrid[y0: y1 + 1, x0: x1 + 1]
    raw = frame.data[y0: y1 + 1, x0: x1 + 1]
    keep = (np.hypot(uu - det.cx, vv - det.cy) <= R) & (raw != 0)
    z = raw[keep].astype(np.float64) * frame.depth_scale
    u, v = uu[keep].astype(np.float64), vv[keep].astype(np.float64)
    keep_z = z <= location.position[2] + depth_gate * location.diameter_m
    z, u, v = z[keep_z], u[keep_z], v[keep_z]
    pts = np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=1)
    return PointCloud(pts)


def _check_frames(rgb, depth):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"RGB frame must be (h, w, 3), got {rgb.shape}")
    if rgb.shape[:2] != depth.data.shape:
        raise ShapeMismatch(f"RGB {rgb.shape[:2]} and depth {depth.data.shape} are not registered")


def run_pipeline(rgb, depth, K, model=None, cfg=None, model_up=None):
    """Process one registered RGB-D frame into ``(reports, rejects)``.

    One :class:`MushroomReport` per cap that made it through every stage
    and one :class:`Reject` per cap that failed; a failing cap never aborts
    the frame.  Both lists follow detection order (descending score) and
    ids are detection indices.  Without a model the sensor-facing default
    hemisphere from :func:`default_cap_model` is used.
    """
    reports, rejects, _ = run_pipeline_detailed(rgb, depth, K, model, cfg, model_up)
    return reports, rejects


def run_pipeline_detailed(rgb, depth, K, model=None, cfg=None, model_up=None):
    """:func:`run_pipeline` that also returns the detections; ``len(reports) + len(rejects) == len(detections)``."""
    cfg = cfg or PipelineConfig()
    _check_frames(rgb, depth)
    if model is None:
        model, model_up = default_cap_model()
    if model_up is None:
        model_up = cfg.model_up if cfg.model_up is not None else DEFAULT_MODEL_UP
    radius = model_radius(model, model_up)
    if not radius > 0:
        raise ValueError("model has no extent across its up axis")
    detections = detect_caps(rgb, cfg)
    located, loc_rejects = localize(detections, depth, K)
    failed = {id(det): (reason, msg) for det, reason, msg in loc_rejects}
    by_det = {id(loc.circle): loc for loc in located}

    reports, rejects = [], []
    for i, det in enumerate(detections):
        if id(det) in failed:
            reason, msg = failed[id(det)]
            rejects.append(Reject(i, det, "localize", reason, msg))
            continue
        loc = by_det[id(det)]
        sample = crop_sample_cloud(depth, K, loc, cfg.crop_factor, cfg.depth_gate)
        try:
            if len(sample) == 0:
                raise StageError("crop", EmptyCloud("no valid depth inside the crop"))
            cap_model = model
            if cfg.scale_to_cap:
                cap_model = scale_model(model, 0.5 * loc.diameter_m / radius)
            result, quat, normal = estimate_pose(cap_model, sample, cfg.pose, model_up)
        except StageError as exc:
            rejects.append(Reject(i, det, exc.stage, exc.reason, str(exc)))
            continue
        except PerceptionError as exc:
            rejects.append(Reject(i, det, "pose", exc.reason, str(exc)))
            continue
        reports.append(MushroomReport(
            id=i,
            center_px=(det.cx, det.cy),
            radius_px=det.r,
            position_m=tuple(float(c) for c in loc.position),
            distance_m=loc.distance_m,
            diameter_m=loc.diameter_m,
            quaternion_xyzw=tuple(quat.as_xyzw()),
            cap_normal=tuple(float(c) for c in normal),
            fill_used=loc.fill_used,
            pose_fitness=result.fitness,
        ))
    return reports, rejects, detections


def report_document(reports, rejects, detections):
    """JSON-ready document for one frame."""
    return {
        "n_detections": len(detections),
        "detections": [
            {"id": i, "cx": d.cx, "cy": d.cy, "r": d.r, "score": d.score} for i, d in enumerate(detections)
        ],
        "reports": [r.to_dict() for r in reports],
        "rejects": [r.to_dict() for r in rejects],
    }
