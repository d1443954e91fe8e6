"""Phase-coded circular Hough transform on binary masks.

Every boundary pixel votes on the disk of offsets around it.  An offset at
distance ``d`` votes for an edge of radius ``rho = d + 1/2`` (boundary pixel
centres sit half a pixel inside the edge) with phase proportional to
``log rho`` and weight ``1/(2 pi d)`` divided by the pixel density of a
digital boundary.  A full circle therefore produces a peak of magnitude
close to one at its centre regardless of size, a partial arc scores its
share of the perimeter, and the peak phase encodes the radius.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import ndimage, signal

from .errors import ZeroMagnitude

# boundary pixel centres lie this far inside the continuous edge
EDGE_OFFSET = 0.5
# pixels per unit length of an 8-connected digital curve, averaged over direction
EDGE_DENSITY = 2.0 * math.sqrt(2.0) / math.pi


@dataclass(frozen=True)
class RadiusRange:
    r_min: int = 8
    r_max: int = 38

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got [{self.r_min}, {self.r_max}]")

    @property
    def vote_min(self):
        # a margin of one pixel on each side keeps circles at the ends of the
        # range from losing the votes of their slightly off-centre neighbours
        return max(self.r_min - 1.0, EDGE_OFFSET)

    @property
    def vote_max(self):
        return self.r_max + 1.0

    @property
    def log_span(self):
        # one phase turn covers [vote_min, vote_max + 1) so no voted radius aliases
        return math.log((self.vote_max + 1.0) / self.vote_min)

    def phase(self, r):
        return 2.0 * np.pi * (np.log(r) - math.log(self.vote_min)) / self.log_span


@dataclass(frozen=True)
class CircleDetection:
    cx: float
    cy: float
    r: float
    score: float


def boundary_pixels(mask):
    """Foreground pixels with at least one background 4-neighbour, as ``(x, y)`` pairs.

    Only neighbours inside the image count: the frame edge is where the view
    ends, not an object contour, so a blob cut by it has no boundary there.
    """
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, mode="edge")
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    ys, xs = np.nonzero(m & ~interior)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def cht_kernel(radius_range):
    """Complex voting kernel, odd square of side ``2 ceil(vote_max + 1/2) + 1``."""
    R = int(math.ceil(radius_range.vote_max + EDGE_OFFSET))
    dy, dx = np.mgrid[-R: R + 1, -R: R + 1]
    d = np.hypot(dx, dy)
    rho = d + EDGE_OFFSET
    inside = (rho >= radius_range.vote_min) & (rho < radius_range.vote_max + 1.0)
    rho = np.where(inside, rho, radius_range.vote_min)
    weight = np.where(inside, 1.0 / (2.0 * np.pi * EDGE_DENSITY * np.maximum(d, EDGE_OFFSET)), 0.0)
    return weight * np.exp(1j * radius_range.phase(rho))


def cht_accumulate(edges, radius_range, shape):
    """Complex accumulator of shape ``shape`` (height, width) from ``(x, y)`` edge pixels."""
    h, w = shape
    acc = np.zeros((h, w), dtype=np.complex128)
    if len(edges) == 0:
        return acc
    edge_img = np.zeros((h, w), dtype=np.float64)
    xs, ys = np.asarray(edges, dtype=np.int64).T
    np.add.at(edge_img, (ys, xs), 1.0)
    acc = signal.fftconvolve(edge_img, cht_kernel(radius_range), mode="same")
    # FFT round-off leaves ~1e-16 residue where nothing voted
    acc.real[np.abs(acc.real) < 1e-12] = 0.0
    acc.imag[np.abs(acc.imag) < 1e-12] = 0.0
    return acc


def inward_normals(mask):
    """Unit vectors pointing into the foreground (Sobel gradient of the mask), ``(nx, ny)``.

    Zero where the gradient vanishes.  The frame edge is replicated, as in
    :func:`boundary_pixels`.
    """
    m = np.asarray(mask, dtype=np.float64)
    gx = ndimage.sobel(m, axis=1, mode="nearest")
    gy = ndimage.sobel(m, axis=0, mode="nearest")
    norm = np.hypot(gx, gy)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, gx / safe, 0.0), np.where(norm > 0, gy / safe, 0.0)


def cht_accumulate_facing(edges, normals, radius_range, shape):
    """Accumulator whose votes are weighted by how squarely each edge faces the voted centre.

    With ``c = n . u`` (``n`` the edge's inward normal, ``u`` the unit
    direction from the edge to the voted cell) each vote is scaled by
    ``(c + c^2) / 2``: one for an edge facing the centre, zero for an edge
    seen side-on or facing away.  A blob's own boundary therefore votes as in
    :func:`cht_accumulate`, while arcs of neighbouring blobs (which face
    away from a gap between them) barely vote.  The weight is a polynomial
    in the normal components, so the sum is five convolutions.
    """
    h, w = shape
    if len(edges) == 0:
        return np.zeros((h, w), dtype=np.complex128)
    kernel = cht_kernel(radius_range)
    R = kernel.shape[0] // 2
    dy, dx = np.mgrid[-R: R + 1, -R: R + 1]
    d = np.maximum(np.hypot(dx, dy), EDGE_OFFSET)
    ux, uy = dx / d, dy / d
    xs, ys = np.asarray(edges, dtype=np.int64).T
    nx, ny = normals[0][ys, xs], normals[1][ys, xs]

    def scatter(values):
        img = np.zeros((h, w))
        np.add.at(img, (ys, xs), values)
        return img

    def conv(values, k):
        return signal.fftconvolve(scatter(values), kernel * k, mode="same")

    c = conv(nx, ux) + conv(ny, uy)
    c2 = conv(nx * nx, ux * ux) + 2.0 * conv(nx * ny, ux * uy) + conv(ny * ny, uy * uy)
    return 0.5 * (c + c2)


def decode_radius(value, radius_range):
    """Radius encoded in the phase of an accumulator value."""
    if abs(value) == 0:
        raise ZeroMagnitude("cannot decode a radius from a zero accumulator value")
    theta = math.atan2(value.imag, value.real) % (2.0 * math.pi)
    return radius_range.vote_min * math.exp(theta / (2.0 * math.pi) * radius_range.log_span)


def _subpixel(mag, y, x):
    h, w = mag.shape

    def offset(lo, mid, hi):
        denom = lo - 2.0 * mid + hi
        if denom >= 0:
            return 0.0
        return float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))

    ox = offset(mag[y, x - 1], mag[y, x], mag[y, x + 1]) if 0 < x < w - 1 else 0.0
    oy = offset(mag[y - 1, x], mag[y, x], mag[y + 1, x]) if 0 < y < h - 1 else 0.0
    return x + ox, y + oy


def non_max_suppression(candidates, min_dist):
    """Greedy suppression by descending score.

    A candidate survives if its centre is at least ``min_dist`` from every
    kept centre and does not fall inside a kept circle; caps do not overlap,
    so a centre inside a stronger circle is a partial-arc artefact.
    """
    kept = []
    for det in sorted(candidates, key=lambda d: (-d.score, d.cy, d.cx)):
        if all(math.hypot(det.cx - k.cx, det.cy - k.cy) >= max(min_dist, k.r) for k in kept):
            kept.append(det)
    return kept


def smooth_accumulator(acc, sigma=1.0):
    """Gaussian-smooth the real and imaginary parts of an accumulator.

    The phase turns quickly across the peak of a small circle, so the
    smoothed magnitude is only used to locate peaks.
    """
    if sigma <= 0:
        return acc
    re = ndimage.gaussian_filter(acc.real, sigma, mode="constant")
    im = ndimage.gaussian_filter(acc.imag, sigma, mode="constant")
    return re + 1j * im


def detect_circles(mask, radius_range=None, score_thresh=0.45, nms_dist=None, smooth_sigma=1.0):
    """Detect circles in an (already opened) binary mask.

    Votes come from :func:`cht_accumulate_facing`, so gaps ringed by
    neighbouring blobs do not form phantom circles and a neighbour's arc
    does not pull a centre.  Peaks are located on the smoothed magnitude
    and refined with a 3x3 quadratic fit; score and radius come from the
    unsmoothed accumulator at the peak cell.
    Returns a list of :class:`CircleDetection` sorted by descending score.
    """
    radius_range = radius_range or RadiusRange()
    if nms_dist is None:
        nms_dist = radius_range.r_min
    mask = np.asarray(mask, dtype=bool)
    edges = boundary_pixels(mask)
    if not edges:
        return []
    raw = cht_accumulate_facing(edges, inward_normals(mask), radius_range, mask.shape)
    smooth = np.abs(smooth_accumulator(raw, smooth_sigma))
    score = np.abs(raw)
    peaks = (score >= score_thresh) & (smooth == ndimage.maximum_filter(smooth, size=3, mode="constant"))
    candidates = []
    for y, x in zip(*np.nonzero(peaks)):
        cx, cy = _subpixel(smooth, y, x)
        r = decode_radius(raw[y, x], radius_range)
        r = min(max(r, radius_range.r_min), radius_range.r_max)
        candidates.append(CircleDetection(float(cx), float(cy), float(r), float(score[y, x])))
    return non_max_suppression(candidates, nms_dist)
