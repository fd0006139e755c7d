"""Late-cascade fusion of LiDAR 3D detections with stereo-camera 2D detections."""

from __future__ import annotations

from .assignment import AssignmentResult, solve_assignment
from .config import ConfigError, FusionConfig, load_config
from .detections import Detection2D, Detection3D, GroundTruth
from .evaluation import DifficultyTier, EvalReport, compute_ap, evaluate, iou_3d, rotated_bev_iou
from .fusion import ClassDistribution, FusedDetection, fuse_semantics, probabilistic_ensemble
from .geometry import Box2D, Box3D, CalibrationFrame, CameraModel, GeometryError
from .matching import MatchSet, match_boxes
from .pipeline import FrameResult, fuse_frame
from .recovery import GeometricBaselineLocalizer, recover_detections
from .synthetic import DegradationSpec, SceneConfig, generate_scene, simulate_detectors

__version__ = "0.1.0"

__all__ = [
    "AssignmentResult",
    "Box2D",
    "Box3D",
    "CalibrationFrame",
    "CameraModel",
    "ClassDistribution",
    "ConfigError",
    "DegradationSpec",
    "Detection2D",
    "Detection3D",
    "DifficultyTier",
    "EvalReport",
    "FrameResult",
    "FusedDetection",
    "FusionConfig",
    "GeometricBaselineLocalizer",
    "GeometryError",
    "GroundTruth",
    "MatchSet",
    "SceneConfig",
    "compute_ap",
    "evaluate",
    "fuse_frame",
    "fuse_semantics",
    "generate_scene",
    "iou_3d",
    "load_config",
    "match_boxes",
    "probabilistic_ensemble",
    "recover_detections",
    "rotated_bev_iou",
    "simulate_detectors",
    "solve_assignment",
]
