"""Detection scoring against ground-truth circles and depth-accuracy statistics."""

from dataclasses import dataclass
import math

import numpy as np

from .errors import NoValidPixels, UndefinedScore


@dataclass(frozen=True)
class GroundTruthCircle:
    cx: float
    cy: float
    r: float
    id: int = 0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"ground-truth radius must be positive, got {self.r}")

    def to_dict(self):
        return {"cx": self.cx, "cy": self.cy, "r": self.r, "id": self.id}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["cx"]), float(d["cy"]), float(d["r"]), d.get("id", 0))


@dataclass(frozen=True)
class DetectionMetrics:
    tp: int
    fp: int
    fn: int
    recall: float
    precision: float
    fscore: float
    matches: tuple = ()  # (det index, gt index, iou)

    def to_dict(self):
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "recall": self.recall,
            "precision": self.precision,
            "fscore": self.fscore,
            "matches": [list(m) for m in self.matches],
        }


@dataclass(frozen=True)
class DepthAccuracyStats:
    mean_m: float
    std_m: float
    range_m: float
    offset_m: float
    n_valid: int

    def to_dict(self):
        return {
            "mean_m": self.mean_m,
            "std_m": self.std_m,
            "range_m": self.range_m,
            "offset_m": self.offset_m,
            "n_valid": self.n_valid,
        }


def circle_iou(a, b):
    """Intersection over union of two disks, via the exact lens area."""
    if not (a.r > 0 and b.r > 0):
        raise ValueError("radii must be positive")
    r1, r2 = float(a.r), float(b.r)
    d = math.hypot(a.cx - b.cx, a.cy - b.cy)
    a1, a2 = math.pi * r1 * r1, math.pi * r2 * r2
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        inter = min(a1, a2)
    else:
        c1 = np.clip((d * d + r1 * r1 - r2 * r2) / (2 * d * r1), -1.0, 1.0)
        c2 = np.clip((d * d + r2 * r2 - r1 * r1) / (2 * d * r2), -1.0, 1.0)
        k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)
        inter = r1 * r1 * math.acos(c1) + r2 * r2 * math.acos(c2) - 0.5 * math.sqrt(max(k, 0.0))
    union = a1 + a2 - inter
    return float(min(max(inter / union, 0.0), 1.0))


def f_score(recall, precision):
    if recall + precision <= 0:
        raise UndefinedScore("F-score undefined when recall and precision are both 0")
    return 2.0 * recall * precision / (recall + precision)


def match_detections(dets, gts, iou_thresh=0.5):
    """Greedy one-to-one matching in descending detection score.

    Each detection takes the still-unmatched ground truth with the highest
    IoU, provided it reaches ``iou_thresh``.  With no ground truth and no
    detections recall is 1; with no detections precision is 1.
    """
    order = sorted(range(len(dets)), key=lambda i: -getattr(dets[i], "score", 0.0))
    taken = set()
    matches = []
    for i in order:
        best, best_iou = None, iou_thresh
        for j, gt in enumerate(gts):
            if j in taken:
                continue
            iou = circle_iou(dets[i], gt)
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = j, iou
        if best is not None:
            taken.add(best)
            matches.append((i, best, best_iou))
    tp = len(matches)
    fp = len(dets) - tp
    fn = len(gts) - tp
    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    fs = f_score(recall, precision) if recall + precision > 0 else 0.0
    return DetectionMetrics(tp, fp, fn, recall, precision, fs, tuple(matches))


def depth_accuracy(frame, gt_depth, window=31, center=None):
    """Statistics over the valid pixels of a ``window`` x ``window`` patch.

    The patch is centred on ``center`` (``(u, v)`` pixels), by default the
    image centre.  ``offset_m`` is ``gt_depth - mean``: negative when the
    sensor reads too far.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd size")
    h, w = frame.data.shape
    if center is None:
        center = (w // 2, h // 2)
    u0, v0 = int(round(center[0])), int(round(center[1]))
    half = window // 2
    if u0 - half < 0 or v0 - half < 0 or u0 + half >= w or v0 + half >= h:
        raise ValueError("window does not fit inside the frame")
    patch = frame.data[v0 - half: v0 + half + 1, u0 - half: u0 + half + 1]
    valid = patch[patch != 0]
    if valid.size == 0:
        raise NoValidPixels("no valid depth inside the window")
    # statistics on raw counts, scaled once: a uniform patch gives exactly 0 spread
    raw = valid.astype(np.float64)
    mean = float(raw.mean() * frame.depth_scale)
    return DepthAccuracyStats(
        mean_m=mean,
        std_m=float(raw.std() * frame.depth_scale),
        range_m=float((raw.max() - raw.min()) * frame.depth_scale),
        offset_m=float(gt_depth - mean),
        n_valid=int(valid.size),
    )
