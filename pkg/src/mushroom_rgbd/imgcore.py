"""Pixel-grid primitives: grayscale conversion, Otsu masking, binary morphology.

Images are plain numpy arrays in row-major ``(height, width)`` layout.
RGB images are ``(h, w, 3)`` uint8, grayscale images are float64 in
``[0, 255]`` and masks are bool.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConstantImage, ShapeMismatch

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def as_rgb(img):
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"expected an (h, w, 3) RGB image, got shape {arr.shape}")
    return arr


def to_grayscale(img):
    """Convert an ``(h, w, 3)`` RGB image to BT.601 luma as float64."""
    rgb = as_rgb(img).astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    gray = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    return np.clip(gray, 0.0, 255.0)


def _histogram_bins(gray):
    # bin k collects values in (k-1, k], so ``bin > t`` is exactly ``value > t``
    return np.clip(np.ceil(np.asarray(gray, dtype=np.float64)), 0, 255).astype(np.int64)


def otsu_threshold(gray):
    """Otsu's threshold over 256 bins.

    Returns
    -------
    mask : ndarray of bool
        True where ``gray > threshold``.
    threshold : int
        The first bin index maximising the between-class variance.
    """
    gray = np.asarray(gray, dtype=np.float64)
    bins = _histogram_bins(gray)
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        raise ConstantImage("histogram has a single occupied bin")

    levels = np.arange(256, dtype=np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    m0 = np.cumsum(hist * levels)
    m1 = m0[-1] - m0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (m0 / w0 - m1 / w1) ** 2
    between[~np.isfinite(between)] = -1.0
    threshold = int(np.argmax(between))
    return bins > threshold, threshold


@dataclass(frozen=True)
class StructuringElement:
    shape: str
    size: tuple
    offsets: tuple  # (dy, dx) pairs relative to the anchor

    @classmethod
    def ellipse(cls, width=10, height=10):
        """Inscribed ellipse of a ``width x height`` box; pixel kept if its centre is inside."""
        ay, ax = height // 2, width // 2
        offsets = []
        for row in range(height):
            for col in range(width):
                u = (col + 0.5 - width / 2.0) / (width / 2.0)
                v = (row + 0.5 - height / 2.0) / (height / 2.0)
                if u * u + v * v <= 1.0:
                    offsets.append((row - ay, col - ax))
        return cls("ellipse", (width, height), tuple(offsets))

    @classmethod
    def rect(cls, width, height):
        ay, ax = height // 2, width // 2
        offsets = tuple((r - ay, c - ax) for r in range(height) for c in range(width))
        return cls("rect", (width, height), offsets)

    def __post_init__(self):
        if not self.offsets:
            raise ValueError("structuring element needs at least one offset")


def _padded(mask, margin):
    return np.pad(mask, margin, mode="constant", constant_values=False)


def erode(mask, se):
    """Binary erosion; pixels outside the image count as background."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    m = max(max(abs(dy), abs(dx)) for dy, dx in se.offsets)
    pad = _padded(mask, m)
    out = np.ones_like(mask)
    for dy, dx in se.offsets:
        out &= pad[m + dy: m + dy + h, m + dx: m + dx + w]
    return out


def dilate(mask, se):
    """Binary dilation by ``se`` (Minkowski sum)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    m = max(max(abs(dy), abs(dx)) for dy, dx in se.offsets)
    pad = _padded(mask, m)
    out = np.zeros_like(mask)
    for dy, dx in se.offsets:
        out |= pad[m - dy: m - dy + h, m - dx: m - dx + w]
    return out


def morphological_open(mask, se=None):
    """Erosion followed by dilation; defaults to the 10x10 ellipse."""
    if se is None:
        se = StructuringElement.ellipse(10, 10)
    return dilate(erode(mask, se), se)
