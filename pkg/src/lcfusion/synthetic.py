"""Deterministic synthetic stereo + LiDAR scenes and a detector simulator.

Scenes follow KITTI's sensor layout: a LiDAR 1.73 m above a flat ground
plane and a forward-looking stereo pair with a 0.54 m baseline. Object
points are sampled on box surfaces with a density that falls off with the
square of range, and ground clutter is scattered around them.

Detections produced by ``simulate_detectors`` carry ids: ids below
``len(scene.objects)`` are the perturbed ground-truth objects, larger ids
are injected false positives.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .config import DEFAULT_ANCHORS
from .detections import Detection2D, Detection3D, GroundTruth
from .evaluation import rotated_bev_iou
from .geometry import (
    LEFT,
    RIGHT,
    Box2D,
    Box3D,
    CalibrationFrame,
    CameraModel,
    View,
    box3d_corners,
    project_box,
    transform_points,
    _project_h,
)


class PlacementError(RuntimeError):
    pass


# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
_AXES = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class SceneConfig:
    focal: float = 721.5377
    cx: float = 609.5593
    cy: float = 172.854
    image_size: Tuple[int, int] = (1242, 375)
    baseline: float = 0.54
    right_yaw_deg: float = 0.0
    lidar_height: float = 1.73
    lidar_offset: Tuple[float, float, float] = (-0.27, 0.0, 0.08)  # LiDAR origin in camera-rig coordinates (x fwd, y left, z up)
    depth_range: Tuple[float, float] = (6.0, 40.0)
    classes: Tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    class_weights: Tuple[float, ...] = (0.5, 0.25, 0.25)
    anchors: Mapping[str, Tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_ANCHORS))
    dim_scale: Tuple[float, float] = (0.9, 1.05)
    surface_density: float = 40.0  # points per m^2 at 10 m
    clutter_points: int = 3000
    clutter_extent: Tuple[float, float, float, float] = (0.0, 70.0, -40.0, 40.0)
    image_margin: float = 2.0
    min_gap: float = 0.5
    max_retries: int = 2000


@dataclass(frozen=True)
class DegradationSpec:
    lidar_dropout: float = 0.0
    class_dropout: Mapping[str, float] = field(default_factory=dict)
    center_noise: float = 0.0
    dim_noise: float = 0.0
    yaw_noise: float = 0.0
    lidar_fp_rate: float = 0.0
    rgb_dropout: float = 0.0
    rgb_fp_rate: float = 0.0
    box2d_jitter: float = 0.0
    rgb_label_flip: float = 0.0
    lidar_score: Tuple[float, float] = (1.0, 1.0)
    rgb_score: Tuple[float, float] = (1.0, 1.0)
    fp_score: Tuple[float, float] = (0.3, 0.9)
    fp_min_distance: float = 4.0

    def __post_init__(self) -> None:
        probs = {
            "lidar_dropout": self.lidar_dropout,
            "lidar_fp_rate": self.lidar_fp_rate,
            "rgb_dropout": self.rgb_dropout,
            "rgb_fp_rate": self.rgb_fp_rate,
            "rgb_label_flip": self.rgb_label_flip,
            **{f"class_dropout[{k}]": v for k, v in self.class_dropout.items()},
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        for name in ("center_noise", "dim_noise", "yaw_noise", "box2d_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("lidar_score", "rgb_score", "fp_score"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must be an interval inside [0, 1], got {(lo, hi)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DegradationSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown degradation keys: {', '.join(unknown)}")
        kwargs = dict(data)
        for key in ("lidar_score", "rgb_score", "fp_score"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path) -> "DegradationSpec":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: degradation spec must be a mapping")
        return cls.from_dict(data)


@dataclass
class SyntheticScene:
    objects: List[Detection3D]
    cloud: np.ndarray  # (N, 4) float32
    calib: CalibrationFrame
    gt2d: Dict[View, List[Detection2D]]
    object_points: List[np.ndarray]

    @property
    def ground_truth(self) -> List[GroundTruth]:
        from .kitti_io import box_to_kitti, observation_angle

        left = self.gt2d.get((0, LEFT), [])
        out = []
        for k, o in enumerate(self.objects):
            _, loc, ry = box_to_kitti(o.box, self.calib.T)
            bbox = left[k].box if k < len(left) else None
            out.append(GroundTruth(o.box, o.label, 0.0, 0, observation_angle(loc, ry), bbox))
        return out


def make_calibration(cfg: SceneConfig = SceneConfig()) -> CalibrationFrame:
    K = np.array([[cfg.focal, 0.0, cfg.cx], [0.0, cfg.focal, cfg.cy], [0.0, 0.0, 1.0]])
    T = np.eye(4)
    T[:3, :3] = _AXES
    T[:3, 3] = _AXES @ np.asarray(cfg.lidar_offset)
    P_l = K @ np.hstack([np.eye(3), np.zeros((3, 1))])
    a = math.radians(cfg.right_yaw_deg)
    R = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])
    center_r = np.array([cfg.baseline, 0.0, 0.0])
    P_r = K @ np.hstack([R, (-R @ center_r)[:, None]])
    w, h = cfg.image_size
    return CalibrationFrame(T, {(0, LEFT): CameraModel(P_l, w, h), (0, RIGHT): CameraModel(P_r, w, h)})


def _fits_in_views(box: Box3D, calib: CalibrationFrame, margin: float) -> bool:
    corners = transform_points(box3d_corners(box), calib.T)
    for view, cam in calib.views.items():
        pixels, depth, valid = _project_h(corners, cam.P, 1e-6)
        if not valid.all() or depth.min() < 1.0:
            return False
        if pixels[:, 0].min() < margin or pixels[:, 1].min() < margin:
            return False
        if pixels[:, 0].max() > cam.width - margin or pixels[:, 1].max() > cam.height - margin:
            return False
    return True


def _grown(box: Box3D, gap: float) -> Box3D:
    return dataclasses.replace(box, l=box.l + gap, w=box.w + gap)


def _sample_surface(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points on the four sides and top of ``box``, area weighted."""
    l, h, w = box.l, box.h, box.w
    areas = np.array([w * h, w * h, l * h, l * h, l * w])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    a = rng.random(n) - 0.5
    b = rng.random(n) - 0.5
    local = np.empty((n, 3))
    for k, (sx, sy) in enumerate(((1, None), (-1, None), (None, 1), (None, -1))):
        m = face == k
        if sx is not None:
            local[m] = np.column_stack([np.full(m.sum(), 0.5 * sx * l), a[m] * w, b[m] * h])
        else:
            local[m] = np.column_stack([a[m] * l, np.full(m.sum(), 0.5 * sy * w), b[m] * h])
    m = face == 4
    local[m] = np.column_stack([a[m] * l, b[m] * w, np.full(m.sum(), 0.5 * h)])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def generate_scene(seed: int, n_objects: int, cfg: SceneConfig = SceneConfig()) -> SyntheticScene:
    if n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    rng = np.random.default_rng(seed)
    calib = make_calibration(cfg)
    weights = np.asarray(cfg.class_weights, dtype=float)
    weights = weights / weights.sum()
    ground = -cfg.lidar_height

    objects: List[Detection3D] = []
    tries = 0
    while len(objects) < n_objects:
        tries += 1
        if tries > cfg.max_retries:
            raise PlacementError(f"could not place {n_objects} objects after {cfg.max_retries} attempts")
        label = cfg.classes[int(rng.choice(len(cfg.classes), p=weights))]
        l, h, w = (d * rng.uniform(*cfg.dim_scale) for d in cfg.anchors[label])
        x = rng.uniform(*cfg.depth_range)
        y = rng.uniform(-0.7, 0.7) * x
        yaw = rng.uniform(-math.pi, math.pi)
        box = Box3D(x, y, ground + 0.5 * h, l, h, w, yaw)
        if not _fits_in_views(box, calib, cfg.image_margin):
            continue
        if any(rotated_bev_iou(_grown(box, cfg.min_gap), _grown(o.box, cfg.min_gap)) > 0 for o in objects):
            continue
        objects.append(Detection3D(box, 1.0, label, len(objects)))

    object_points = []
    for obj in objects:
        r = math.hypot(obj.box.x, obj.box.y)
        area = 2 * obj.box.h * (obj.box.l + obj.box.w) + obj.box.l * obj.box.w
        n = int(round(cfg.surface_density * area * (10.0 / r) ** 2))
        pts = _sample_surface(obj.box, n, rng)
        object_points.append(np.column_stack([pts, rng.random(n)]))

    x0, x1, y0, y1 = cfg.clutter_extent
    m = cfg.clutter_points
    clutter = np.column_stack(
        [rng.uniform(x0, x1, m), rng.uniform(y0, y1, m), ground + rng.normal(0.0, 0.02, m), rng.random(m)]
    )
    cloud = np.vstack(object_points + [clutter]).astype(np.float32)

    gt2d: Dict[View, List[Detection2D]] = {}
    for view in calib.views:
        gt2d[view] = [Detection2D(project_box(o.box, calib, view), 1.0, o.label, view) for o in objects]
    return SyntheticScene(objects, cloud, calib, gt2d, object_points)


def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    u = rng.random()
    return lo if lo == hi else lo + (hi - lo) * u


def _place_false_positive(
    scene: SyntheticScene, label: str, spec: DegradationSpec, taken: Sequence[Box3D], rng: np.random.Generator
) -> Box3D:
    l, h, w = DEFAULT_ANCHORS.get(label, (1.0, 1.0, 1.0))
    ground = scene.objects[0].box.z - 0.5 * scene.objects[0].box.h if scene.objects else -1.73
    for _ in range(1000):
        x = rng.uniform(3.0, 60.0)
        y = rng.uniform(-30.0, 30.0)
        yaw = rng.uniform(-math.pi, math.pi)
        box = Box3D(x, y, ground + 0.5 * h, l, h, w, yaw)
        far = all(
            math.hypot(x - o.x, y - o.y) >= spec.fp_min_distance + 0.5 * (math.hypot(l, w) + math.hypot(o.l, o.w))
            for o in taken
        )
        if far:
            return box
    raise PlacementError("could not place an injected false positive")


def simulate_detectors(
    scene: SyntheticScene, spec: DegradationSpec = DegradationSpec(), seed: int = 0
) -> Tuple[List[Detection3D], Dict[View, List[Detection2D]]]:
    rng = np.random.default_rng(seed)
    classes = sorted({o.label for o in scene.objects} | set(DEFAULT_ANCHORS))
    n = len(scene.objects)

    lidar: List[Detection3D] = []
    for obj in scene.objects:
        drop_p = spec.class_dropout.get(obj.label, spec.lidar_dropout)
        u_drop = rng.random()
        noise = rng.normal(size=7)
        score = _uniform(rng, spec.lidar_score)
        if u_drop < drop_p:
            continue
        b = obj.box
        scale = np.exp(spec.dim_noise * noise[3:6])
        box = Box3D(
            b.x + spec.center_noise * noise[0],
            b.y + spec.center_noise * noise[1],
            b.z + spec.center_noise * noise[2],
            b.l * scale[0],
            b.h * scale[1],
            b.w * scale[2],
            b.yaw + spec.yaw_noise * noise[6],
        )
        lidar.append(Detection3D(box, score, obj.label, obj.id))

    n_fp = int((rng.random(n) < spec.lidar_fp_rate).sum())
    taken = [o.box for o in scene.objects]
    for k in range(n_fp):
        label = classes[int(rng.integers(len(classes)))]
        box = _place_false_positive(scene, label, spec, taken, rng)
        taken.append(box)
        lidar.append(Detection3D(box, _uniform(rng, spec.fp_score), label, n + k))

    rgb: Dict[View, List[Detection2D]] = {}
    for view, cam in scene.calib.views.items():
        dets: List[Detection2D] = []
        for gt in scene.gt2d[view]:
            u_drop = rng.random()
            jitter = rng.normal(size=4) * spec.box2d_jitter
            score = _uniform(rng, spec.rgb_score)
            u_flip = rng.random()
            alt = classes[int(rng.integers(len(classes)))]
            if u_drop < spec.rgb_dropout:
                continue
            label = gt.label
            if u_flip < spec.rgb_label_flip and alt != gt.label:
                label = alt
            box = _jittered(gt.box, jitter, cam)
            if box is not None:
                dets.append(Detection2D(box, score, label, view))
        n_fp2 = int((rng.random(n) < spec.rgb_fp_rate).sum())
        for _ in range(n_fp2):
            bw, bh = rng.uniform(20, 120), rng.uniform(20, 120)
            x0 = rng.uniform(0, cam.width - bw)
            y0 = rng.uniform(0, cam.height - bh)
            label = classes[int(rng.integers(len(classes)))]
            dets.append(Detection2D(Box2D(x0, y0, x0 + bw, y0 + bh), _uniform(rng, spec.fp_score), label, view))
        rgb[view] = dets
    return lidar, rgb


def _jittered(box: Box2D, jitter: np.ndarray, cam: CameraModel) -> Optional[Box2D]:
    x0, y0, x1, y1 = np.asarray(box.as_tuple()) + jitter
    x0, x1 = sorted((x0, x1))
    y0, y1 = sorted((y0, y1))
    return Box2D(float(x0), float(y0), float(x1), float(y1)).clip(cam.width, cam.height)


def export_scene(
    scene: SyntheticScene,
    lidar: Sequence[Detection3D],
    rgb: Mapping[View, Sequence[Detection2D]],
    root: Path,
    stem: str,
) -> None:
    """Write one frame in the KITTI-style directory layout consumed by the CLI."""
    from .kitti_io import write_calibration, write_detections_2d, write_labels, write_point_cloud, write_results

    root = Path(root)
    for sub in DATASET_DIRS.values():
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_point_cloud(scene.cloud, root / DATASET_DIRS["clouds"] / f"{stem}.bin")
    write_calibration(scene.calib, root / DATASET_DIRS["calib"] / f"{stem}.txt")
    write_labels(scene.ground_truth, scene.calib, root / DATASET_DIRS["gt"] / f"{stem}.txt")
    write_results(lidar, scene.calib, root / DATASET_DIRS["lidar_dets"] / f"{stem}.txt")
    write_detections_2d(rgb.get((0, LEFT), []), root / DATASET_DIRS["dets_left"] / f"{stem}.txt")
    write_detections_2d(rgb.get((0, RIGHT), []), root / DATASET_DIRS["dets_right"] / f"{stem}.txt")


DATASET_DIRS = {
    "clouds": "velodyne",
    "calib": "calib",
    "gt": "label_2",
    "lidar_dets": "lidar_dets",
    "dets_left": "dets_left",
    "dets_right": "dets_right",
}
