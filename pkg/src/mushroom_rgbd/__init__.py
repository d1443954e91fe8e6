"""Mushroom cap perception from registered RGB-D frames.

Segmentation (Otsu, Chan-Vese, elliptical opening), phase-coded circular
Hough detection, depth-based 3D localization and diameter, FPFH-based
global registration refined by ICP for cap pose, evaluation metrics and a
synthetic scene generator for ground truth.
"""

from .detection import CircleDetection, RadiusRange, detect_circles
from .errors import PerceptionError, StageError
from .evaluation import (
    DepthAccuracyStats,
    DetectionMetrics,
    GroundTruthCircle,
    circle_iou,
    depth_accuracy,
    f_score,
    match_detections,
)
from .localization import CameraIntrinsics, DepthFrame, MushroomLocation, deproject, localize
from .pipeline import MushroomReport, PipelineConfig, Reject, run_pipeline
from .registration import (
    PointCloud,
    PoseParams,
    Quaternion,
    RigidTransform,
    estimate_pose,
    icp_point_to_point,
    rotation_to_quaternion,
)
from .segmentation import ChanVeseParams, chan_vese_evolve
from .synthetic import CapSpec, SceneSpec, render_scene, sample_cap_cloud

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "CapSpec", "ChanVeseParams", "CircleDetection", "DepthAccuracyStats",
    "DepthFrame", "DetectionMetrics", "GroundTruthCircle", "MushroomLocation", "MushroomReport",
    "PerceptionError", "PipelineConfig", "PointCloud", "PoseParams", "Quaternion", "RadiusRange",
    "Reject", "RigidTransform", "SceneSpec", "StageError", "chan_vese_evolve", "circle_iou",
    "deproject", "depth_accuracy", "detect_circles", "estimate_pose", "f_score", "icp_point_to_point",
    "localize", "match_detections", "render_scene", "rotation_to_quaternion", "run_pipeline",
    "sample_cap_cloud",
]
