"""File formats: PNG frames, ASCII PLY clouds and JSON documents.

Every loader raises :class:`FormatError` with the offending line (PLY,
JSON) so a malformed file can be fixed without guesswork.
"""

import json
import os

import numpy as np
from PIL import Image

from .errors import FormatError
from .evaluation import GroundTruthCircle
from .localization import CameraIntrinsics, DepthFrame
from .registration import PointCloud


def _open_image(path):
    try:
        return Image.open(path)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(f"{path}: not a readable image ({exc})") from exc


def load_rgb(path):
    """8-bit RGB frame as an ``(h, w, 3)`` uint8 array; grayscale and RGBA are converted."""
    with _open_image(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def save_rgb(path, rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected an (h, w, 3) uint8 array")
    Image.fromarray(rgb).save(path, format="PNG")


def load_depth(path, depth_scale=0.001):
    """16-bit single-channel PNG; 0 marks a missing measurement."""
    with _open_image(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "I", "L"):
            raise FormatError(f"{path}: depth PNG must be single-channel 16-bit, got mode {im.mode}")
        data = np.array(im)
    if data.ndim != 2:
        raise FormatError(f"{path}: depth image must be 2-D")
    if data.min() < 0 or data.max() > 65535:
        raise FormatError(f"{path}: depth values outside the 16-bit range")
    return DepthFrame(data.astype(np.uint16), depth_scale)


def save_depth(path, frame):
    data = frame.data if isinstance(frame, DepthFrame) else np.asarray(frame)
    if data.dtype != np.uint16:
        raise ValueError("depth must be uint16")
    Image.fromarray(data).save(path, format="PNG")


# ---------------------------------------------------------------------------
# PLY


_PLY_TYPES = {"float", "float32", "double", "float64", "int", "int32", "uint", "uint32",
              "short", "int16", "ushort", "uint16", "char", "int8", "uchar", "uint8"}


def _parse_header(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}:1: missing 'ply' magic line")
    n_vertex = None
    props = []
    element = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] != "ascii":
                raise FormatError(f"{path}:{lineno}: only 'format ascii 1.0' is supported")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise FormatError(f"{path}:{lineno}: malformed element line")
            element = tok[1]
            if element == "vertex":
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: vertex count {tok[2]!r} is not an integer") from None
                if n_vertex < 0:
                    raise FormatError(f"{path}:{lineno}: negative vertex count")
        elif tok[0] == "property":
            if element != "vertex":
                continue
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise FormatError(f"{path}:{lineno}: unsupported vertex property {raw.strip()!r}")
            props.append(tok[2])
        elif tok[0] == "end_header":
            if n_vertex is None:
                raise FormatError(f"{path}:{lineno}: header declares no vertex element")
            return n_vertex, props, lineno
        else:
            raise FormatError(f"{path}:{lineno}: unexpected header keyword {tok[0]!r}")
    raise FormatError(f"{path}: header has no end_header line")


def read_ply(path):
    """ASCII PLY vertices with float ``x y z`` and optional ``nx ny nz``.

    Vertex data must come first; any later elements are ignored.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    n, props, header_end = _parse_header(lines, path)
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise FormatError(f"{path}: vertex element lacks property {axis!r}")
    has_normals = all(k in props for k in ("nx", "ny", "nz"))
    body = lines[header_end: header_end + n]
    if len(body) < n:
        raise FormatError(f"{path}:{header_end + len(body) + 1}: expected {n} vertices, file ends after {len(body)}")
    values = np.empty((n, len(props)))
    for i, raw in enumerate(body):
        tok = raw.split()
        if len(tok) < len(props):
            raise FormatError(f"{path}:{header_end + i + 1}: expected {len(props)} values, got {len(tok)}")
        try:
            values[i] = [float(t) for t in tok[: len(props)]]
        except ValueError:
            raise FormatError(f"{path}:{header_end + i + 1}: non-numeric vertex value") from None
    if not np.all(np.isfinite(values)):
        bad = int(np.nonzero(~np.all(np.isfinite(values), axis=1))[0][0])
        raise FormatError(f"{path}:{header_end + bad + 1}: non-finite vertex value")
    col = {name: i for i, name in enumerate(props)}
    pts = values[:, [col["x"], col["y"], col["z"]]]
    normals = values[:, [col["nx"], col["ny"], col["nz"]]] if has_normals else None
    return PointCloud(pts, normals)


def write_ply(path, cloud):
    """ASCII PLY with round-trip exact (17 significant digit) coordinates."""
    has_normals = cloud.normals is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property double x", "property double y", "property double z"]
    if has_normals:
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")
    data = cloud.points if not has_normals else np.hstack([cloud.points, cloud.normals])
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(header) + "\n")
        for row in data:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def model_sidecar_path(model_path):
    root, _ = os.path.splitext(model_path)
    return root + ".json"


def load_model(path, default_up=(0.0, 0.0, 1.0)):
    """Model cloud plus its calibrated up vector from the ``.json`` sidecar, if present."""
    cloud = read_ply(path)
    up = np.asarray(default_up, dtype=np.float64)
    side = model_sidecar_path(path)
    if os.path.exists(side):
        meta = load_json(side)
        try:
            up = np.asarray(meta["up"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"{side}: expected {{\"up\": [ux, uy, uz]}}") from None
    n = np.linalg.norm(up)
    if not n > 0:
        raise FormatError("model up vector must be non-zero")
    return cloud, up / n


def save_model(path, cloud, up):
    write_ply(path, cloud)
    save_json(model_sidecar_path(path), {"up": [float(u) for u in up]})


# ---------------------------------------------------------------------------
# JSON


def dumps(obj):
    """Canonical JSON text: fixed key order from the producer, 2-space indent, trailing newline."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def save_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg} (byte offset {exc.pos})") from None


def load_intrinsics(path):
    d = load_json(path)
    try:
        return CameraIntrinsics.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing or malformed intrinsics field {exc}") from None


def save_intrinsics(path, K):
    save_json(path, K.to_dict())


def load_ground_truth(path):
    d = load_json(path)
    if isinstance(d, dict):
        d = d.get("circles", d.get("gt", []))
    try:
        return [GroundTruthCircle.from_dict(c) for c in d]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed ground-truth circle ({exc})") from None


def save_ground_truth(path, circles):
    save_json(path, [c.to_dict() for c in circles])
