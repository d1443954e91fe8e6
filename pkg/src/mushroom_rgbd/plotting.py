"""Report figures rendered to files with the non-interactive Agg backend."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402
import numpy as np  # noqa: E402

DET_COLOR = "#e8112d"
GT_COLOR = "#1f9e3a"
MODEL_COLOR = "#1f5fbf"
SAMPLE_COLOR = "#d98c0b"


def _save(fig, path, dpi):
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def plot_detections(rgb, detections, path, gt=None, labels=True, dpi=100):
    """RGB frame with detected circles and centre marks, optionally over ground truth.

    Parameters
    ----------
    rgb : ndarray
        ``(h, w, 3)`` uint8 frame.
    detections : sequence
        Objects with ``cx``, ``cy`` and ``r`` in pixels.
    path : str
        Output image file; the format follows the extension.
    gt : sequence, optional
        Ground-truth circles drawn dashed underneath the detections.
    """
    rgb = np.asarray(rgb)
    h, w = rgb.shape[:2]
    fig = plt.figure(figsize=(w / dpi, h / dpi), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.imshow(rgb, interpolation="nearest")
    for c in gt or ():
        ax.add_patch(Circle((c.cx, c.cy), c.r, fill=False, ec=GT_COLOR, lw=1.2, ls="--"))
    for i, d in enumerate(detections):
        ax.add_patch(Circle((d.cx, d.cy), d.r, fill=False, ec=DET_COLOR, lw=1.5))
        ax.plot(d.cx, d.cy, "+", color=DET_COLOR, ms=8, mew=1.5)
        if labels:
            ax.text(d.cx + 0.7 * d.r, d.cy - 0.7 * d.r, str(i), color=DET_COLOR, fontsize=8)
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.set_axis_off()
    _save(fig, path, dpi)


def plot_pose(model, sample, transform, path, normal=None, dpi=100):
    """Model and sample point clouds before and after registration.

    The initial panel shows the model translated onto the sample centroid,
    so the rotation error is visible at the sample's scale.

    ``normal`` (unit cap normal in the sample frame) is drawn from the
    sample centroid in the right-hand panel when given.
    """
    before = model.points - model.points.mean(axis=0) + sample.points.mean(axis=0)
    after = transform.apply(model.points)
    fig = plt.figure(figsize=(9.0, 4.2), dpi=dpi)
    lim_pts = np.vstack([before, after, sample.points])
    centre = 0.5 * (lim_pts.min(axis=0) + lim_pts.max(axis=0))
    half = 0.5 * np.ptp(lim_pts, axis=0).max()
    for k, (title, src) in enumerate((("initial", before), ("registered", after))):
        ax = fig.add_subplot(1, 2, k + 1, projection="3d")
        ax.scatter(*sample.points.T, s=1, c=SAMPLE_COLOR, label="sample", depthshade=False)
        ax.scatter(*src.T, s=1, c=MODEL_COLOR, label="model", depthshade=False)
        if normal is not None and k == 1:
            o = sample.points.mean(axis=0)
            n = np.asarray(normal) * 0.8 * half
            ax.quiver(o[0], o[1], o[2], n[0], n[1], n[2], color=DET_COLOR)
        for setter, c in zip((ax.set_xlim, ax.set_ylim, ax.set_zlim), centre):
            setter(c - half, c + half)
        ax.set_xlabel("X [m]")
        ax.set_ylabel("Y [m]")
        ax.set_zlabel("Z [m]")
        ax.set_title(title)
        if k == 0:
            ax.legend(loc="upper left", markerscale=6, fontsize=8)
    _save(fig, path, dpi)


def plot_segmentation(gray, mask, path, dpi=100):
    """Grayscale frame beside the final foreground mask."""
    h, w = np.asarray(gray).shape[:2]
    fig, axes = plt.subplots(1, 2, figsize=(2 * w / dpi, h / dpi), dpi=dpi)
    axes[0].imshow(gray, cmap="gray", interpolation="nearest")
    axes[1].imshow(mask, cmap="gray", interpolation="nearest")
    for ax in axes:
        ax.set_axis_off()
    fig.subplots_adjust(0, 0, 1, 1, 0.02, 0)
    _save(fig, path, dpi)
