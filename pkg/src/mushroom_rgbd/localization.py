"""Pixel detections to camera-frame 3D positions, sensor distance and metric diameter."""

from dataclasses import dataclass, field
import math

import numpy as np

from .detection import CircleDetection
from .errors import InvalidCircle, MissingDepth, NonPositiveDepth, ShapeMismatch


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480
    depth_scale: float = 0.001

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "depth_scale": self.depth_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            depth_scale=float(d.get("depth_scale", 0.001)),
        )


@dataclass
class DepthFrame:
    """Raw 16-bit depth; a value of 0 means no measurement."""

    data: np.ndarray
    depth_scale: float = 0.001

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ShapeMismatch(f"depth frame must be 2-D, got {self.data.shape}")
        if self.data.dtype != np.uint16:
            if np.any(self.data < 0) or np.any(self.data > 65535):
                raise ValueError("depth values must fit in 16 bits")
            self.data = self.data.astype(np.uint16)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def meters(self):
        """Depth in meters with missing pixels as NaN."""
        z = self.data.astype(np.float64) * self.depth_scale
        z[self.data == 0] = np.nan
        return z


@dataclass(frozen=True)
class MushroomLocation:
    circle: CircleDetection
    position: tuple
    distance_m: float
    diameter_m: float
    fill_used: bool
    diameter_flags: tuple = field(default=())


def deproject(u, v, z, K):
    """Pinhole back-projection of pixel ``(u, v)`` at depth ``z`` meters."""
    if not z > 0:
        raise NonPositiveDepth(f"depth must be positive, got {z}")
    return ((u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, float(z))


def project(point, K):
    x, y, z = point
    if not z > 0:
        raise NonPositiveDepth(f"point behind the camera: z = {z}")
    return (K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def sensor_distance(p):
    x, y, z = p
    return math.sqrt(x * x + y * y + z * z)


def depth_with_fill(frame, cx, cy, r, z_max=None):
    """Depth at the rounded centre, or the mean of the nearest valid ring within ``r``.

    Ring ``d`` holds pixels whose Euclidean distance from the rounded centre
    rounds to ``d``.  Returns ``(z_m, fill_used, source_pixels)`` where
    ``source_pixels`` lists the ``(u, v)`` pixels the value came from.
    Readings deeper than ``z_max`` (meters), when given, count as missing.
    """
    if r <= 0:
        raise InvalidCircle(f"search radius must be positive, got {r}")
    u0, v0 = int(round(cx)), int(round(cy))
    if not (0 <= u0 < frame.width and 0 <= v0 < frame.height):
        raise MissingDepth(f"centre ({cx:.1f}, {cy:.1f}) lies outside the frame")
    raw = frame.data
    limit = np.iinfo(np.uint16).max if z_max is None else math.floor(z_max / frame.depth_scale + 1e-9)
    if 0 < raw[v0, u0] <= limit:
        return float(raw[v0, u0]) * frame.depth_scale, False, [(u0, v0)]

    R = int(math.floor(r))
    x0, x1 = max(u0 - R, 0), min(u0 + R, frame.width - 1)
    y0, y1 = max(v0 - R, 0), min(v0 + R, frame.height - 1)
    vv, uu = np.mgrid[y0: y1 + 1, x0: x1 + 1]
    dist = np.hypot(uu - u0, vv - v0)
    ring = np.floor(dist + 0.5).astype(np.int64)
    window = raw[y0: y1 + 1, x0: x1 + 1]
    valid = (window != 0) & (window <= limit) & (dist <= r) & (ring >= 1)
    if not valid.any():
        raise MissingDepth(f"no valid depth within {r:.1f} px of ({cx:.1f}, {cy:.1f})")
    nearest = ring[valid].min()
    sel = valid & (ring == nearest)
    # row-major order keeps the source list deterministic
    src = [(int(u), int(v)) for v, u in zip(vv[sel], uu[sel])]
    z = float(window[sel].astype(np.float64).mean()) * frame.depth_scale
    return z, True, src


# a cap rim lies at most one metric radius behind the centre reading; depth
# beyond RIM_GATE radii belongs to the bed
RIM_GATE = 1.5


def _endpoint_depth_pixel(cx, cy, ux, uy, r):
    # nearest lattice pixel to the endpoint that stays within the circle,
    # so the depth sample is taken on the cap rather than the background
    tx, ty = cx + ux * r, cy + uy * r
    best = None
    for px in (math.floor(tx), math.ceil(tx)):
        for py in (math.floor(ty), math.ceil(ty)):
            if math.hypot(px - cx, py - cy) <= r + 1e-9:
                d = math.hypot(px - tx, py - ty)
                if best is None or d < best[0]:
                    best = (d, px, py)
    if best is None:
        return int(round(cx + ux * (r - 1))), int(round(cy + uy * (r - 1)))
    return best[1], best[2]


def _axis_diameter(frame, det, K, ux, uy, z_max):
    ends = []
    for sign in (-1.0, 1.0):
        px, py = _endpoint_depth_pixel(det.cx, det.cy, sign * ux, sign * uy, det.r)
        if not (0 <= px < frame.width and 0 <= py < frame.height):
            raise MissingDepth("diameter endpoint outside the frame")
        z, _, _ = depth_with_fill(frame, px, py, det.r, z_max)
        ends.append(deproject(det.cx + sign * ux * det.r, det.cy + sign * uy * det.r, z, K))
    (x1, y1, z1), (x2, y2, z2) = ends
    return math.sqrt((x2 - x1) ** 2 + (y2 - y1) ** 2 + (z2 - z1) ** 2)


def estimate_diameter_detailed(frame, det, K):
    """Metric diameter plus the list of axes that could not be measured."""
    if not det.r > 0:
        raise InvalidCircle(f"circle radius must be positive, got {det.r}")
    z_c, _, _ = depth_with_fill(frame, det.cx, det.cy, det.r)
    z_max = z_c * (1.0 + RIM_GATE * det.r / K.fx)
    values, flags = [], []
    for axis, (ux, uy) in (("row", (1.0, 0.0)), ("column", (0.0, 1.0))):
        try:
            values.append(_axis_diameter(frame, det, K, ux, uy, z_max))
        except MissingDepth:
            flags.append(f"{axis}_missing")
    if not values:
        raise MissingDepth("neither the row nor the column endpoints have cap depth")
    return sum(values) / len(values), tuple(flags)


def estimate_diameter(frame, det, K):
    """Mean of the row and column endpoint distances; one axis alone if the other is unmeasurable.

    Endpoint geometry uses the sub-pixel circle edge; depth is read at the
    nearest pixel inside the circle, hole-filled within the cap radius.
    Readings deeper than the centre depth plus ``RIM_GATE`` metric radii
    count as missing, so a circle slightly larger than the cap does not
    pick up the bed.
    """
    return estimate_diameter_detailed(frame, det, K)[0]


def locate(det, frame, K):
    z, fill_used, src = depth_with_fill(frame, det.cx, det.cy, det.r)
    if fill_used:
        pts = np.array([deproject(u, v, float(frame.data[v, u]) * frame.depth_scale, K) for u, v in src])
        position = tuple(float(c) for c in pts.mean(axis=0))
    else:
        u, v = src[0]
        position = deproject(u, v, z, K)
    diameter, flags = estimate_diameter_detailed(frame, det, K)
    return MushroomLocation(
        circle=det,
        position=position,
        distance_m=sensor_distance(position),
        diameter_m=diameter,
        fill_used=fill_used,
        diameter_flags=flags,
    )


def localize(dets, frame, K):
    """Locate every detection; returns ``(locations, rejects)``.

    ``rejects`` holds ``(detection, reason, message)`` for caps whose depth
    could not be recovered.
    """
    located, rejected = [], []
    for det in dets:
        try:
            located.append(locate(det, frame, K))
        except (MissingDepth, InvalidCircle, NonPositiveDepth) as exc:
            rejected.append((det, exc.reason, str(exc)))
    return located, rejected
