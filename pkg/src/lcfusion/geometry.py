"""Projective and epipolar geometry kernels.

Conventions used throughout the package:

* 3D boxes live in the LiDAR frame (x forward, y left, z up) and are
  parameterised by their geometric center, dimensions ``(l, h, w)`` and a
  yaw about +z. ``l`` runs along the heading, ``w`` across it.
* ``CalibrationFrame.T`` maps LiDAR coordinates to the reference camera
  frame; each view's 3x4 ``P`` maps reference-camera coordinates to pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

DEPTH_EPS = 1e-6

LEFT = "l"
RIGHT = "r"

View = Tuple[int, str]


class GeometryError(ValueError):
    """Raised when a geometric construction is undefined."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    h: float
    w: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "l", "h", "w"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.l > 0 and self.h > 0 and self.w > 0):
            raise ValueError(f"box dimensions must be positive, got l={self.l} h={self.h} w={self.w}")
        values = (self.x, self.y, self.z, self.yaw)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("box center and yaw must be finite")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def volume(self) -> float:
        return self.l * self.h * self.w

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.h, self.w, self.yaw], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box3D":
        x, y, z, l, h, w, yaw = (float(v) for v in values)
        return cls(x, y, z, l, h, w, yaw)

    def bev_corners(self) -> np.ndarray:
        """(4, 2) footprint corners, counterclockwise seen from above."""
        return box3d_corners(self)[:4, :2]


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"malformed 2D box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clip(self, width: float, height: float) -> Optional["Box2D"]:
        """Clamp to ``[0, width] x [0, height]``; ``None`` when fully outside."""
        x0 = min(max(self.x_min, 0.0), width)
        x1 = min(max(self.x_max, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        y1 = min(max(self.y_max, 0.0), height)
        if self.x_max < 0.0 or self.y_max < 0.0 or self.x_min > width or self.y_min > height:
            return None
        return Box2D(x0, y0, x1, y1)


@dataclass(frozen=True)
class CameraModel:
    P: np.ndarray
    width: int = 1242
    height: int = 375

    def __post_init__(self) -> None:
        P = np.array(self.P, dtype=float)
        if P.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {P.shape}")
        if np.linalg.matrix_rank(P[:, :3]) < 3:
            raise ValueError("left 3x3 block of the projection matrix must have rank 3")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def center(self) -> np.ndarray:
        """Camera center in reference-camera coordinates."""
        return -np.linalg.solve(self.P[:, :3], self.P[:, 3])


@dataclass(frozen=True)
class CalibrationFrame:
    T: np.ndarray
    views: Mapping[View, CameraModel] = field(default_factory=dict)

    def __post_init__(self) -> None:
        T = np.array(self.T, dtype=float)
        if T.shape == (3, 4):
            T = np.vstack([T, [0.0, 0.0, 0.0, 1.0]])
        if T.shape != (4, 4):
            raise ValueError(f"LiDAR-to-camera transform must be 4x4, got {T.shape}")
        if abs(np.linalg.det(T)) < 1e-12:
            raise ValueError("LiDAR-to-camera transform must be invertible")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)
        views = dict(sorted(self.views.items()))
        if not self.pair_indices_of(views):
            raise ValueError("calibration must contain at least one complete stereo pair")
        object.__setattr__(self, "views", views)

    @staticmethod
    def pair_indices_of(views: Mapping[View, CameraModel]) -> list:
        return sorted(i for (i, side) in views if side == LEFT and (i, RIGHT) in views)

    @property
    def pairs(self) -> list:
        return self.pair_indices_of(self.views)

    def camera(self, view: View) -> CameraModel:
        try:
            return self.views[view]
        except KeyError:
            raise KeyError(f"no camera declared for view {view}") from None

    def lidar_to_pixel(self, view: View) -> np.ndarray:
        """3x4 matrix taking homogeneous LiDAR points straight to pixels."""
        return self.camera(view).P @ self.T


def box3d_corners(box: Box3D) -> np.ndarray:
    """Return the (8, 3) corners of an oriented box.

    Bottom face first, counterclockwise seen from above starting at the
    front-right corner (+l/2, -w/2), then the top face in the same order.
    """
    hl, hw, hh = 0.5 * box.l, 0.5 * box.w, 0.5 * box.h
    local = np.array(
        [
            [hl, -hw, -hh],
            [hl, hw, -hh],
            [-hl, hw, -hh],
            [-hl, -hw, -hh],
            [hl, -hw, hh],
            [hl, hw, hh],
            [-hl, hw, hh],
            [-hl, -hw, hh],
        ]
    )
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def transform_points(points: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Apply a 4x4 homogeneous transform to (N, 3) points (extra columns dropped)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    xyz = pts[:, :3]
    out = xyz @ T[:3, :3].T + T[:3, 3]
    w = xyz @ T[3, :3] + T[3, 3]
    if not np.allclose(w, 1.0):
        out = out / w[:, None]
    return out


def project_points(
    points: np.ndarray, cam: CameraModel, eps: float = DEPTH_EPS
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project reference-camera points into a view.

    Returns ``(pixels, depth, valid)``; pixels of points with depth <= eps are
    NaN and flagged invalid instead of being divided.
    """
    return _project_h(np.asarray(points, dtype=float)[:, :3], cam.P, eps)


def _project_h(xyz: np.ndarray, M: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    hom = xyz @ M[:, :3].T + M[:, 3]
    depth = hom[:, 2]
    valid = depth > eps
    pixels = np.full((len(xyz), 2), np.nan)
    pixels[valid] = hom[valid, :2] / depth[valid, None]
    return pixels, depth, valid


def enclosing_aabb(pixels: np.ndarray, valid: Optional[np.ndarray] = None) -> Optional[Box2D]:
    """Tightest Box2D around the valid pixels, or ``None`` if there are none."""
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if valid is not None:
        px = px[np.asarray(valid, dtype=bool)]
    px = px[np.all(np.isfinite(px), axis=1)]
    if len(px) == 0:
        return None
    lo = px.min(axis=0)
    hi = px.max(axis=0)
    return Box2D(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def project_box(box: Box3D, calib: CalibrationFrame, view: View, eps: float = DEPTH_EPS) -> Optional[Box2D]:
    """Corners -> LiDAR-to-camera transform -> projection -> enclosing box."""
    corners = transform_points(box3d_corners(box), calib.T)
    pixels, _, valid = project_points(corners, calib.camera(view), eps)
    return enclosing_aabb(pixels, valid)


def iou_axis_aligned(a: Box2D, b: Box2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a: Sequence[Optional[Box2D]], boxes_b: Sequence[Box2D]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        if a is None:
            continue
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_axis_aligned(a, b)
    return out


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_from_projections(P_l, P_r) -> np.ndarray:
    """Fundamental matrix with ``x_r^T F x_l = 0``, unit Frobenius norm.

    Built as ``[e_r]_x P_r P_l^+`` where ``e_r`` is the image of the left
    camera center in the right view.
    """
    P_l = P_l.P if isinstance(P_l, CameraModel) else np.asarray(P_l, dtype=float)
    P_r = P_r.P if isinstance(P_r, CameraModel) else np.asarray(P_r, dtype=float)
    c_l = -np.linalg.solve(P_l[:, :3], P_l[:, 3])
    c_r = -np.linalg.solve(P_r[:, :3], P_r[:, 3])
    scale = max(1.0, float(np.linalg.norm(c_l)), float(np.linalg.norm(c_r)))
    if np.linalg.norm(c_l - c_r) <= 1e-9 * scale:
        raise GeometryError("camera centers coincide; epipolar geometry is undefined")
    epipole = P_r @ np.append(c_l, 1.0)
    F = skew(epipole) @ P_r @ np.linalg.pinv(P_l)
    norm = np.linalg.norm(F)
    if norm == 0.0:
        raise GeometryError("degenerate fundamental matrix")
    return F / norm


def epipolar_line(F: np.ndarray, point: Sequence[float]) -> np.ndarray:
    """Line ``(a, b, c)`` in the right view for a left-view pixel, a^2+b^2 = 1."""
    line = F @ np.array([point[0], point[1], 1.0])
    n = math.hypot(line[0], line[1])
    if n == 0.0:
        raise GeometryError("pixel coincides with the epipole; epipolar line undefined")
    return line / n


def point_line_distance(line: np.ndarray, point: Sequence[float]) -> float:
    return abs(line[0] * point[0] + line[1] * point[1] + line[2]) / math.hypot(line[0], line[1])


CORNER_PAIRS = {
    "tl_br": (("x_min", "y_min"), ("x_max", "y_max")),
    "tr_bl": (("x_max", "y_min"), ("x_min", "y_max")),
}


def _corner(box: Box2D, names: Tuple[str, str]) -> Tuple[float, float]:
    return getattr(box, names[0]), getattr(box, names[1])


def epipolar_box_distance(b_l: Box2D, b_r: Box2D, F: np.ndarray, corners: str = "tl_br") -> float:
    """Sum of point-to-epipolar-line distances of two diagonal corners.

    ``corners`` selects the diagonal: ``"tl_br"`` (top-left, bottom-right) or
    ``"tr_bl"``.
    """
    if corners not in CORNER_PAIRS:
        raise ValueError(f"corners must be one of {sorted(CORNER_PAIRS)}, got {corners!r}")
    F = np.asarray(F, dtype=float)
    F = F / np.linalg.norm(F)
    total = 0.0
    for names in CORNER_PAIRS[corners]:
        line = epipolar_line(F, _corner(b_l, names))
        total += point_line_distance(line, _corner(b_r, names))
    return total


def camera_center_lidar(calib: CalibrationFrame, view: View) -> np.ndarray:
    """Camera center of a view expressed in the LiDAR frame."""
    M = calib.lidar_to_pixel(view)
    return -np.linalg.solve(M[:, :3], M[:, 3])


def pixel_ray_lidar(calib: CalibrationFrame, view: View, pixel: Sequence[float]) -> np.ndarray:
    """Unit direction (LiDAR frame) of the back-projected ray through ``pixel``."""
    M = calib.lidar_to_pixel(view)
    d = np.linalg.solve(M[:, :3], np.array([pixel[0], pixel[1], 1.0]))
    if M[2, :3] @ d < 0:
        d = -d
    return d / np.linalg.norm(d)


def points_in_box2d(pixels: np.ndarray, box: Box2D) -> np.ndarray:
    """Inclusive membership mask; NaN pixels are never inside."""
    u, v = pixels[:, 0], pixels[:, 1]
    with np.errstate(invalid="ignore"):
        return (u >= box.x_min) & (u <= box.x_max) & (v >= box.y_min) & (v <= box.y_max)


def stack_boxes(boxes: Iterable[Box3D]) -> np.ndarray:
    arr = [b.as_array() for b in boxes]
    return np.array(arr, dtype=float).reshape(-1, 7)
