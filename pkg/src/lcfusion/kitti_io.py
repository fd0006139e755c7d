"""Readers and writers for KITTI calibration, velodyne scans and label/result files.

KITTI boxes are stored in the rectified camera frame with the location at the
bottom-face center, dimensions ordered ``h w l`` and ``rotation_y`` about the
camera's downward y axis. Internally boxes are geometric-center LiDAR-frame
``Box3D``; conversion happens here and nowhere else.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .detections import Detection2D, Detection3D, GroundTruth
from .geometry import (
    LEFT,
    RIGHT,
    Box2D,
    Box3D,
    CalibrationFrame,
    CameraModel,
    View,
    project_box,
    transform_points,
    wrap_angle,
)

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

CALIB_SIZES = {"P0": 12, "P1": 12, "P2": 12, "P3": 12, "R0_rect": 9, "Tr_velo_to_cam": 12, "Tr_imu_to_velo": 12}
REQUIRED_CALIB_KEYS = ("P2", "P3", "R0_rect", "Tr_velo_to_cam")

KNOWN_SKIPPED = {"DontCare", "Misc"}


class KittiFormatError(ValueError):
    pass


@dataclass
class FrameBundle:
    frame_id: str
    cloud: np.ndarray
    calib: CalibrationFrame
    rgb: Dict[View, List[Detection2D]] = field(default_factory=dict)
    lidar: List[Detection3D] = field(default_factory=list)
    ground_truth: Optional[List[GroundTruth]] = None


# -- calibration -------------------------------------------------------------


def _homogeneous(mat: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[: mat.shape[0], : mat.shape[1]] = mat
    return out


def parse_calibration(text: str, image_size: Tuple[int, int] = (1242, 375), source: str = "<calib>") -> CalibrationFrame:
    rows: Dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if ":" not in line:
            raise KittiFormatError(f"{source}:{lineno}: expected 'KEY: values', got {line!r}")
        key, _, values = line.partition(":")
        key = key.strip()
        tokens = values.split()
        try:
            nums = np.array([float(t) for t in tokens])
        except ValueError:
            raise KittiFormatError(f"{source}:{lineno}: non-numeric value under key {key}") from None
        expected = CALIB_SIZES.get(key)
        if expected is not None and len(nums) != expected:
            raise KittiFormatError(f"{source}:{lineno}: key {key} needs {expected} floats, got {len(nums)}")
        rows[key] = nums
    for key in REQUIRED_CALIB_KEYS:
        if key not in rows:
            raise KittiFormatError(f"{source}: missing key {key}")
    T = _homogeneous(rows["R0_rect"].reshape(3, 3)) @ _homogeneous(rows["Tr_velo_to_cam"].reshape(3, 4))
    w, h = image_size
    views = {
        (0, LEFT): CameraModel(rows["P2"].reshape(3, 4), w, h),
        (0, RIGHT): CameraModel(rows["P3"].reshape(3, 4), w, h),
    }
    return CalibrationFrame(T, views)


def read_calibration(path: PathLike, image_size: Tuple[int, int] = (1242, 375)) -> CalibrationFrame:
    path = Path(path)
    return parse_calibration(path.read_text(), image_size, str(path))


def format_calibration(calib: CalibrationFrame) -> str:
    """KITTI calibration text; R0_rect is written as identity and T as Tr_velo_to_cam."""
    left = calib.camera((0, LEFT)).P
    right = calib.camera((0, RIGHT)).P
    mats = [
        ("P0", left),
        ("P1", right),
        ("P2", left),
        ("P3", right),
        ("R0_rect", np.eye(3)),
        ("Tr_velo_to_cam", calib.T[:3, :]),
    ]
    return "".join(f"{k}: " + " ".join(f"{v:.12e}" for v in m.ravel()) + "\n" for k, m in mats)


def write_calibration(calib: CalibrationFrame, path: PathLike) -> None:
    Path(path).write_text(format_calibration(calib))


# -- point clouds ------------------------------------------------------------


def read_point_cloud(path: PathLike) -> np.ndarray:
    """(N, 4) float32 array of x, y, z, reflectance."""
    path = Path(path)
    size = path.stat().st_size
    if size % 16:
        raise KittiFormatError(f"{path}: size {size} is not a multiple of 16 bytes")
    return np.fromfile(path, dtype="<f4").reshape(-1, 4)


def write_point_cloud(points: np.ndarray, path: PathLike) -> None:
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise ValueError(f"points must be (N, 3) or (N, 4), got {pts.shape}")
    if pts.shape[1] == 3:
        pts = np.hstack([pts, np.zeros((len(pts), 1))])
    pts.astype("<f4").tofile(Path(path))


# -- box conventions ---------------------------------------------------------


def kitti_to_box(dims_hwl: Sequence[float], location: Sequence[float], rotation_y: float, T: np.ndarray) -> Box3D:
    h, w, l = (float(v) for v in dims_hwl)
    x, y, z = (float(v) for v in location)
    center_cam = np.array([[x, y - 0.5 * h, z]])
    center = transform_points(center_cam, np.linalg.inv(T))[0]
    return Box3D(center[0], center[1], center[2], l, h, w, -rotation_y - 0.5 * math.pi)


def box_to_kitti(box: Box3D, T: np.ndarray) -> Tuple[Tuple[float, float, float], Tuple[float, float, float], float]:
    """Return ``((h, w, l), (x, y, z) bottom center in camera frame, rotation_y)``."""
    c = transform_points(box.center[None, :], T)[0]
    location = (float(c[0]), float(c[1] + 0.5 * box.h), float(c[2]))
    return (box.h, box.w, box.l), location, wrap_angle(-box.yaw - 0.5 * math.pi)


def observation_angle(location: Sequence[float], rotation_y: float) -> float:
    return wrap_angle(rotation_y - math.atan2(location[0], location[2]))


# -- label / result rows -----------------------------------------------------


def _parse_rows(path: Path, kind: str, dims: str) -> List[Tuple[int, List[str]]]:
    if kind not in ("label", "result"):
        raise ValueError(f"kind must be 'label' or 'result', got {kind!r}")
    if dims not in ("2d", "3d"):
        raise ValueError(f"dims must be '2d' or '3d', got {dims!r}")
    expected = 15 if kind == "label" else 16
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        fields = raw.split()
        if not fields:
            continue
        if len(fields) != expected:
            raise KittiFormatError(f"{path}:{lineno}: expected {expected} columns for a {kind} row, got {len(fields)}")
        rows.append((lineno, fields))
    return rows


def _floats(path: Path, lineno: int, tokens: Sequence[str]) -> List[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise KittiFormatError(f"{path}:{lineno}: non-numeric field in {' '.join(tokens)!r}") from None


def read_detections(
    path: PathLike,
    kind: str = "result",
    dims: str = "3d",
    calib: Optional[CalibrationFrame] = None,
    classes: Optional[Sequence[str]] = None,
    unknown: str = "skip",
    view: View = (0, LEFT),
):
    """Parse a KITTI label/result file.

    ``dims="3d"`` yields ``Detection3D`` (results) or ``GroundTruth`` (labels)
    and needs ``calib``; ``dims="2d"`` yields ``Detection2D`` for ``view``.
    """
    path = Path(path)
    rows = _parse_rows(path, kind, dims)
    if dims == "3d" and calib is None:
        raise ValueError("3D boxes need the frame calibration")
    out = []
    for lineno, fields in rows:
        label = fields[0]
        if classes is not None and label not in classes:
            if unknown == "error" and label not in KNOWN_SKIPPED:
                raise KittiFormatError(f"{path}:{lineno}: unknown class {label!r}")
            if label not in KNOWN_SKIPPED:
                log.warning("%s:%d: skipping unknown class %r", path, lineno, label)
            continue
        nums = _floats(path, lineno, fields[1:])
        truncation, occlusion, alpha = nums[0], int(nums[1]), nums[2]
        bbox_vals = nums[3:7]
        score = nums[14] if kind == "result" else 1.0
        if not 0.0 <= score <= 1.0:
            raise KittiFormatError(f"{path}:{lineno}: score {score} outside [0, 1]")
        if dims == "2d":
            try:
                out.append(Detection2D(Box2D(*bbox_vals), score, label, view))
            except ValueError as exc:
                raise KittiFormatError(f"{path}:{lineno}: {exc}") from None
            continue
        h, w, l = nums[7:10]
        loc = nums[10:13]
        ry = nums[13]
        try:
            box = kitti_to_box((h, w, l), loc, ry, calib.T)
        except ValueError as exc:
            raise KittiFormatError(f"{path}:{lineno}: {exc}") from None
        if kind == "result":
            out.append(Detection3D(box, score, label, len(out)))
        else:
            x0, y0, x1, y1 = bbox_vals
            bbox = Box2D(x0, y0, x1, y1) if x1 >= x0 and y1 >= y0 else None
            out.append(GroundTruth(box, label, truncation, occlusion, alpha, bbox))
    return out


def _fmt(v: float) -> str:
    s = f"{v:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _box_row(label: str, trunc: float, occ: int, alpha: float, bbox: Optional[Box2D], box: Box3D, T: np.ndarray) -> List[str]:
    (h, w, l), loc, ry = box_to_kitti(box, T)
    coords = bbox.as_tuple() if bbox is not None else (0.0, 0.0, 0.0, 0.0)
    return [label, _fmt(trunc), str(int(occ)), _fmt(alpha), *(_fmt(c) for c in coords),
            _fmt(h), _fmt(w), _fmt(l), *(_fmt(c) for c in loc), _fmt(ry)]


def left_bbox(box: Box3D, calib: CalibrationFrame, view: View = (0, LEFT)) -> Optional[Box2D]:
    cam = calib.camera(view)
    proj = project_box(box, calib, view)
    return None if proj is None else proj.clip(cam.width, cam.height)


def format_results(detections: Sequence, calib: CalibrationFrame, view: View = (0, LEFT)) -> str:
    """16-column result rows; 2D box and alpha derived from the 3D box."""
    lines = []
    for det in detections:
        (_, loc, ry) = box_to_kitti(det.box, calib.T)
        row = _box_row(det.label, -1, -1, observation_angle(loc, ry), left_bbox(det.box, calib, view), det.box, calib.T)
        row.append(_fmt(det.score))
        lines.append(" ".join(row))
    return "".join(line + "\n" for line in lines)


def write_results(detections: Sequence, calib: CalibrationFrame, path: PathLike, view: View = (0, LEFT)) -> None:
    Path(path).write_text(format_results(detections, calib, view))


def format_labels(gts: Sequence[GroundTruth], calib: CalibrationFrame) -> str:
    lines = []
    for gt in gts:
        bbox = gt.bbox if gt.bbox is not None else left_bbox(gt.box, calib)
        lines.append(" ".join(_box_row(gt.label, gt.truncation, gt.occlusion, gt.alpha, bbox, gt.box, calib.T)))
    return "".join(line + "\n" for line in lines)


def write_labels(gts: Sequence[GroundTruth], calib: CalibrationFrame, path: PathLike) -> None:
    Path(path).write_text(format_labels(gts, calib))


def format_detections_2d(detections: Sequence[Detection2D]) -> str:
    """16-column rows carrying only type, 2D box and score (3D fields set to KITTI's 2D-only placeholders)."""
    lines = []
    for det in detections:
        row = [det.label, "-1", "-1", "-10", *(_fmt(c) for c in det.box.as_tuple()),
               "-1", "-1", "-1", "-1000", "-1000", "-1000", "-10", _fmt(det.score)]
        lines.append(" ".join(row))
    return "".join(line + "\n" for line in lines)


def write_detections_2d(detections: Sequence[Detection2D], path: PathLike) -> None:
    Path(path).write_text(format_detections_2d(detections))
