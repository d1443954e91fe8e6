"""Command-line interface: ``mushroom-rgbd {detect,pose,synth,eval,depth-accuracy}``.

Exit codes: 0 on success, 1 on input errors (missing or malformed files,
invalid parameters), 2 when ``--require-detections`` is given and nothing
was detected.
"""

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import io
from .detection import CircleDetection
from .errors import PerceptionError
from .evaluation import depth_accuracy, match_detections
from .localization import CameraIntrinsics
from .pipeline import (
    PipelineConfig,
    default_cap_model,
    report_document,
    run_pipeline_detailed,
    segment,
)
from .registration import PoseParams, estimate_pose
from .synthetic import SceneSpec, random_scene_spec, render_scene

log = logging.getLogger("mushroom_rgbd")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EMPTY = 2

DEFAULT_INTRINSICS = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0)


class InputError(Exception):
    """Bad command-line input; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, keep exit code 2 for empty results
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _write_json(path, doc):
    if path is None or path == "-":
        sys.stdout.write(io.dumps(doc))
    else:
        io.save_json(path, doc)
        log.info("wrote %s", path)


def _figure_path(out, suffix):
    root, _ = os.path.splitext(out)
    return f"{root}.{suffix}.png"


def _load_config(path):
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.from_dict(io.load_json(path))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_pose_params(path, seed):
    params = PoseParams()
    if path is not None:
        d = io.load_json(path)
        # either bare pose params or a pipeline config with a "pose" section
        d = d.get("pose", d) if isinstance(d, dict) else d
        try:
            params = PoseParams(**d)
        except TypeError as exc:
            raise InputError(f"{path}: {exc}") from None
    if seed is not None:
        params = dataclasses.replace(params, seed=seed)
    return params


def _model_for(args, cfg):
    path = args.model or cfg.model_path
    if path is None:
        return default_cap_model()
    cloud, up = io.load_model(path)
    if cfg.model_up is not None:
        up = np.asarray(cfg.model_up, dtype=np.float64)
    return cloud, up


def cmd_detect(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, pose=dataclasses.replace(cfg.pose, seed=args.seed))
    K = io.load_intrinsics(args.intrinsics)
    rgb = io.load_rgb(args.rgb)
    depth = io.load_depth(args.depth, K.depth_scale)
    model, up = _model_for(args, cfg)
    reports, rejects, detections = run_pipeline_detailed(rgb, depth, K, model, cfg, up)
    log.info("%d detections, %d reports, %d rejects", len(detections), len(reports), len(rejects))
    _write_json(args.out, report_document(reports, rejects, detections))

    if args.figures and args.out not in (None, "-"):
        from .imgcore import to_grayscale
        from .plotting import plot_detections, plot_segmentation

        plot_detections(rgb, detections, _figure_path(args.out, "overlay"))
        plot_segmentation(to_grayscale(rgb), segment(rgb, cfg), _figure_path(args.out, "mask"))
    if args.overlay:
        from .plotting import plot_detections

        plot_detections(rgb, detections, args.overlay)
    if args.require_detections and not detections:
        print("no caps detected", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def cmd_pose(args):
    params = _load_pose_params(args.config, args.seed)
    model, up = io.load_model(args.model, default_up=(0.0, 0.0, 1.0))
    sample = io.read_ply(args.sample)
    result, quat, normal = estimate_pose(model, sample, params, up)
    T = result.transform
    doc = {
        "quaternion_xyzw": [float(q) for q in quat.as_xyzw()],
        "cap_normal": [float(n) for n in normal],
        "rotation": T.rotation.tolist(),
        "translation": T.translation.tolist(),
        "fitness": result.fitness,
        "inlier_rmse": result.inlier_rmse,
        "iterations": result.iterations,
        "init": result.init,
        "objective_history": [float(e) for e in result.objective_history],
    }
    _write_json(args.out, doc)
    figure = args.figure
    if figure is None and args.figures and args.out not in (None, "-"):
        figure = _figure_path(args.out, "pose")
    if figure:
        from .plotting import plot_pose

        plot_pose(model, sample, T, figure, normal=normal)
    return EXIT_OK


def _read_scene_spec(path):
    d = io.load_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: scene spec must be a JSON object")
    d = dict(d)
    K = CameraIntrinsics.from_dict(d.pop("intrinsics")) if "intrinsics" in d else DEFAULT_INTRINSICS
    try:
        return SceneSpec.from_dict(d), K
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed scene spec ({exc})") from None


def cmd_synth(args):
    if args.spec is not None:
        spec, K = _read_scene_spec(args.spec)
    else:
        K = DEFAULT_INTRINSICS
        rng = np.random.default_rng(args.seed)
        spec = random_scene_spec(rng, K, args.random, noise_sigma=args.noise, seed=args.seed)
    scene = render_scene(spec, K)
    os.makedirs(args.out_dir, exist_ok=True)
    join = lambda name: os.path.join(args.out_dir, name)  # noqa: E731
    io.save_rgb(join("rgb.png"), scene.rgb)
    io.save_depth(join("depth.png"), scene.depth)
    io.save_intrinsics(join("intrinsics.json"), K)
    io.save_json(join("spec.json"), {**spec.to_dict(), "intrinsics": K.to_dict()})
    io.save_json(join("gt.json"), {
        "circles": [c.to_dict() for c in scene.gt_circles],
        "locations": [
            {"id": i, "position_m": list(loc.position), "distance_m": loc.distance_m, "diameter_m": loc.diameter_m}
            for i, loc in enumerate(scene.gt_locations)
        ],
        "normals": [[float(v) for v in n] for n in scene.gt_normals],
    })
    model, up = default_cap_model()
    io.save_model(join("model.ply"), model, up)
    log.info("wrote scene with %d caps to %s", len(spec.caps), args.out_dir)
    return EXIT_OK


def _predicted_circles(doc, path):
    if isinstance(doc, dict) and "detections" in doc:
        items = doc["detections"]
    elif isinstance(doc, dict) and "reports" in doc:
        items = [{"cx": r["center_px"][0], "cy": r["center_px"][1], "r": r["radius_px"]} for r in doc["reports"]]
    elif isinstance(doc, list):
        items = doc
    else:
        raise InputError(f"{path}: expected a detect report or a list of circles")
    try:
        return [CircleDetection(float(c["cx"]), float(c["cy"]), float(c["r"]), float(c.get("score", 0.0)))
                for c in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed predicted circle ({exc})") from None


def cmd_eval(args):
    preds = _predicted_circles(io.load_json(args.pred), args.pred)
    gts = io.load_ground_truth(args.gt)
    for c in preds:
        if not c.r > 0:
            raise InputError(f"{args.pred}: predicted radius must be positive")
    metrics = match_detections(preds, gts, args.iou)
    _write_json(args.out, metrics.to_dict())
    return EXIT_OK


def cmd_depth_accuracy(args):
    K = io.load_intrinsics(args.intrinsics) if args.intrinsics else None
    scale = args.depth_scale if args.depth_scale is not None else (K.depth_scale if K else 0.001)
    frame = io.load_depth(args.depth, scale)
    center = (K.cx, K.cy) if K else None
    stats = depth_accuracy(frame, args.gt_depth, args.window, center)
    _write_json(args.out, stats.to_dict())
    return EXIT_OK


def build_parser():
    p = _Parser(prog="mushroom-rgbd", description="Mushroom cap detection, localization and pose from RGB-D frames.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="run the full pipeline on one RGB-D frame")
    d.add_argument("--rgb", required=True, help="8-bit RGB PNG")
    d.add_argument("--depth", required=True, help="16-bit depth PNG, registered to the RGB frame")
    d.add_argument("--intrinsics", required=True, help="intrinsics JSON {width, height, fx, fy, cx, cy, depth_scale}")
    d.add_argument("--config", help="pipeline config JSON")
    d.add_argument("--model", help="cap model PLY (up vector from the .json sidecar)")
    d.add_argument("--seed", type=int, help="override the pose tuple-sampling seed")
    d.add_argument("--out", required=True, help="report JSON ('-' for stdout)")
    d.add_argument("--overlay", help="write the detection overlay to this image")
    d.add_argument("--figures", action="store_true", help="write overlay and mask figures next to --out")
    d.add_argument("--require-detections", action="store_true", help="exit with code 2 when nothing is detected")
    d.set_defaults(func=cmd_detect)

    q = sub.add_parser("pose", help="register a cap model to a sample cloud")
    q.add_argument("--model", required=True, help="model PLY (up vector from the .json sidecar, else +z)")
    q.add_argument("--sample", required=True, help="sample PLY")
    q.add_argument("--config", help="pose params JSON, or a pipeline config with a 'pose' section")
    q.add_argument("--seed", type=int, help="override the tuple-sampling seed")
    q.add_argument("--out", required=True, help="pose JSON ('-' for stdout)")
    q.add_argument("--figure", help="write the before/after registration figure to this image")
    q.add_argument("--figures", action="store_true", help="write the registration figure next to --out")
    q.set_defaults(func=cmd_pose)

    s = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="scene spec JSON (optionally with an 'intrinsics' object)")
    src.add_argument("--random", type=int, metavar="N", help="place N random untilted caps")
    s.add_argument("--seed", type=int, default=0, help="seed for --random")
    s.add_argument("--noise", type=float, default=5.0, help="intensity noise sigma for --random")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score predicted circles against ground truth")
    e.add_argument("--pred", required=True, help="detect report JSON or a list of {cx, cy, r}")
    e.add_argument("--gt", required=True, help="ground-truth circles JSON")
    e.add_argument("--iou", type=float, default=0.5, help="IoU match threshold")
    e.add_argument("--out", help="metrics JSON (default stdout)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("depth-accuracy", help="depth statistics of a flat target against its true distance")
    a.add_argument("--depth", required=True, help="16-bit depth PNG")
    a.add_argument("--gt-depth", required=True, type=float, metavar="METERS")
    a.add_argument("--window", type=int, default=31, help="odd window size in pixels")
    a.add_argument("--depth-scale", type=float, help="meters per depth unit (default from intrinsics, else 0.001)")
    a.add_argument("--intrinsics", help="intrinsics JSON; centres the window on the principal point")
    a.add_argument("--out", help="statistics JSON (default stdout)")
    a.set_defaults(func=cmd_depth_accuracy)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, PerceptionError, FileNotFoundError, IsADirectoryError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"mushroom-rgbd {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
