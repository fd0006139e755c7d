"""Recovery of missed LiDAR detections from unmatched stereo 2D detections.

Unmatched left/right boxes are paired by epipolar cost, the point cloud is
cropped to the intersection of the two (slightly enlarged) frustums, a
localizer turns the crop into a 3D box and the box is kept only if it
re-projects consistently onto the 2D evidence.
"""

from __future__ import annotations

import itertools
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from .assignment import FORBIDDEN, solve_assignment
from .config import FusionConfig
from .detections import Detection2D
from .geometry import (
    DEPTH_EPS,
    LEFT,
    RIGHT,
    Box2D,
    Box3D,
    CalibrationFrame,
    GeometryError,
    View,
    _project_h,
    camera_center_lidar,
    epipolar_box_distance,
    fundamental_from_projections,
    iou_axis_aligned,
    pixel_ray_lidar,
    points_in_box2d,
)
from .matching import clipped_projection


@dataclass(frozen=True)
class FrustumProposal:
    points: np.ndarray  # (N, 4) x, y, z, reflectance in the LiDAR frame
    left: Detection2D
    right: Detection2D
    enlargement: float
    pair: int = 0

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class LocalizerResult:
    box: Box3D
    score: Optional[float] = None


class Localizer(Protocol):
    def __call__(self, proposal: FrustumProposal, label: str, calib: CalibrationFrame) -> Optional[LocalizerResult]:
        ...


@dataclass(frozen=True)
class RecoveredPair:
    box: Box3D
    score: float
    label: str
    left: Detection2D
    right: Detection2D
    iou_left: float
    iou_right: float
    pair: int = 0
    native_score: Optional[float] = None


# -- 2D helpers -------------------------------------------------------------


def enlarge_box(b: Box2D, e: float, width: float, height: float) -> Box2D:
    """Scale width and height by ``1 + e`` about the center, then clamp to the image."""
    if e < 0:
        raise ValueError(f"enlargement must be >= 0, got {e}")
    cx, cy = b.center
    hw = 0.5 * b.width * (1.0 + e)
    hh = 0.5 * b.height * (1.0 + e)
    return Box2D(
        min(max(cx - hw, 0.0), width),
        min(max(cy - hh, 0.0), height),
        min(max(cx + hw, 0.0), width),
        min(max(cy + hh, 0.0), height),
    )


def match_stereo(
    left: Sequence[Detection2D],
    right: Sequence[Detection2D],
    F: np.ndarray,
    d_max: float = math.inf,
    corners: str = "tl_br",
    class_gating: bool = False,
) -> List[Tuple[Detection2D, Detection2D, float]]:
    """Pair left/right boxes minimising the summed epipolar corner distance."""
    if not left or not right:
        return []
    cost = np.empty((len(left), len(right)))
    for i, bl in enumerate(left):
        for j, br in enumerate(right):
            if class_gating and bl.label != br.label:
                cost[i, j] = FORBIDDEN
            else:
                cost[i, j] = epipolar_box_distance(bl.box, br.box, F, corners)
    result = solve_assignment(cost, maximize=False)
    return [(left[i], right[j], float(cost[i, j])) for i, j in result.pairs if cost[i, j] <= d_max]


def crop_frustum_intersection(
    cloud: np.ndarray,
    b_l: Box2D,
    b_r: Box2D,
    calib: CalibrationFrame,
    e: float,
    pair: int = 0,
    eps: float = DEPTH_EPS,
) -> np.ndarray:
    """Rows of ``cloud`` inside both enlarged frustums (inclusive bounds, positive depth)."""
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim == 1:
        cloud = cloud.reshape(-1, 4)
    keep = np.ones(len(cloud), dtype=bool)
    for side, box in ((LEFT, b_l), (RIGHT, b_r)):
        view = (pair, side)
        cam = calib.camera(view)
        grown = enlarge_box(box, e, cam.width, cam.height)
        pixels, _, valid = _project_h(cloud[:, :3], calib.lidar_to_pixel(view), eps)
        keep &= valid & points_in_box2d(pixels, grown)
    return cloud[keep]


def make_proposal(
    cloud: np.ndarray,
    left: Detection2D,
    right: Detection2D,
    calib: CalibrationFrame,
    e: float,
    pair: int = 0,
    eps: float = DEPTH_EPS,
) -> FrustumProposal:
    points = crop_frustum_intersection(cloud, left.box, right.box, calib, e, pair, eps)
    return FrustumProposal(points, left, right, e, pair)


# -- localizers ------------------------------------------------------------


def _intersect_rays(c1, d1, c2, d2) -> Optional[np.ndarray]:
    """Intersection of two forward BEV rays, ``None`` if parallel or behind."""
    A = np.array([[d1[0], -d2[0]], [d1[1], -d2[1]]])
    det = np.linalg.det(A)
    if abs(det) < 1e-12 * max(1.0, np.linalg.norm(d1) * np.linalg.norm(d2)):
        return None
    t1, t2 = np.linalg.solve(A, np.asarray(c2) - np.asarray(c1))
    if t1 <= 0 or t2 <= 0:
        return None
    return np.asarray(c1) + t1 * np.asarray(d1)


def _points_in_footprint(points: np.ndarray, box: Box3D) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = points[:, 0] - box.x
    dy = points[:, 1] - box.y
    along = dx * c + dy * s
    across = -dx * s + dy * c
    return (np.abs(along) <= 0.5 * box.l) & (np.abs(across) <= 0.5 * box.w)


@dataclass
class GeometricBaselineLocalizer:
    """Anchor-sized box placed from frustum edge geometry alone.

    The BEV center is the midpoint of two ray intersections: the bottom-left
    corner rays of the two views, and the bottom-right corner rays. Yaw is 0
    or pi/2 depending on which BEV axis the crop spreads along more, and the
    vertical center is the mean height of the crop inside the footprint.
    """

    anchors: Mapping[str, Tuple[float, float, float]]

    def bev_intersections(self, proposal: FrustumProposal, calib: CalibrationFrame) -> Optional[List[np.ndarray]]:
        i = proposal.pair
        lv, rv = (i, LEFT), (i, RIGHT)
        c_l = camera_center_lidar(calib, lv)[:2]
        c_r = camera_center_lidar(calib, rv)[:2]
        bl, br = proposal.left.box, proposal.right.box
        out = []
        for x_l, x_r in ((bl.x_min, br.x_min), (bl.x_max, br.x_max)):
            d_l = pixel_ray_lidar(calib, lv, (x_l, bl.y_max))[:2]
            d_r = pixel_ray_lidar(calib, rv, (x_r, br.y_max))[:2]
            hit = _intersect_rays(c_l, d_l, c_r, d_r)
            if hit is None:
                return None
            out.append(hit)
        return out

    def __call__(self, proposal: FrustumProposal, label: str, calib: CalibrationFrame) -> Optional[LocalizerResult]:
        if len(proposal) == 0:
            return None
        hits = self.bev_intersections(proposal, calib)
        if hits is None:
            return None
        cx, cy = 0.5 * (hits[0] + hits[1])
        l, h, w = self.anchors[label]
        pts = proposal.points

        # depth measured along the left camera's optical axis projected to BEV
        view = (proposal.pair, LEFT)
        axis = calib.lidar_to_pixel(view)[2, :2]
        axis = axis / np.linalg.norm(axis)
        origin = camera_center_lidar(calib, view)[:2]
        hit_depth = [float(axis @ (p - origin)) for p in hits]
        pt_depth = (pts[:, :2] - origin) @ axis
        band = (pt_depth >= min(hit_depth)) & (pt_depth <= max(hit_depth))
        spread = pts[band] if band.sum() >= 2 else pts
        x_extent = float(np.ptp(spread[:, 0]))
        y_extent = float(np.ptp(spread[:, 1]))
        yaw = 0.0 if x_extent > y_extent else 0.5 * math.pi

        footprint = Box3D(float(cx), float(cy), 0.0, l, h, w, yaw)
        column = _points_in_footprint(pts, footprint)
        cz = float(pts[column, 2].mean()) if column.any() else float(pts[:, 2].mean())
        return LocalizerResult(Box3D(float(cx), float(cy), cz, l, h, w, yaw))


class ExternalLocalizer:
    """Delegate localization to an external program through files.

    For every proposal the adapter writes ``proposal_<n>.bin`` (points, same
    layout as a velodyne scan) and a text record ``proposal_<n>.txt``::

        points proposal_<n>.bin
        class <label>
        pair <i>
        left <x_min> <y_min> <x_max> <y_max> <score> <label>
        right <x_min> <y_min> <x_max> <y_max> <score> <label>

    then runs ``<command> <record> <result>``. The program answers with one
    line ``x y z l h w yaw [score]`` (LiDAR frame, geometric center) in the
    result file; an empty or missing result means no detection.
    """

    def __init__(self, command: str, workdir: Optional[Path] = None, timeout: float = 60.0):
        self.command = shlex.split(command)
        self.workdir = Path(workdir) if workdir is not None else None
        self.timeout = timeout
        self._counter = itertools.count()

    def __call__(self, proposal: FrustumProposal, label: str, calib: CalibrationFrame) -> Optional[LocalizerResult]:
        if self.workdir is None:
            with tempfile.TemporaryDirectory(prefix="lcfusion-") as tmp:
                return self._run(Path(tmp), proposal, label)
        self.workdir.mkdir(parents=True, exist_ok=True)
        return self._run(self.workdir, proposal, label)

    def _run(self, workdir: Path, proposal: FrustumProposal, label: str) -> Optional[LocalizerResult]:
        from .kitti_io import write_point_cloud

        n = next(self._counter)
        stem = f"proposal_{n:06d}"
        bin_path = workdir / f"{stem}.bin"
        record = workdir / f"{stem}.txt"
        result = workdir / f"{stem}.result"
        write_point_cloud(proposal.points, bin_path)
        lines = [f"points {bin_path.name}", f"class {label}", f"pair {proposal.pair}"]
        for side, det in (("left", proposal.left), ("right", proposal.right)):
            coords = " ".join(f"{v:.6f}" for v in det.box.as_tuple())
            lines.append(f"{side} {coords} {det.score:.6f} {det.label}")
        record.write_text("\n".join(lines) + "\n")
        subprocess.run([*self.command, str(record), str(result)], check=True, timeout=self.timeout)
        return parse_localizer_output(result.read_text() if result.exists() else "")


def parse_localizer_output(text: str) -> Optional[LocalizerResult]:
    rows = [r for r in text.splitlines() if r.strip()]
    if not rows:
        return None
    fields = rows[0].split()
    if len(fields) not in (7, 8):
        raise ValueError(f"localizer output must have 7 or 8 fields, got {len(fields)}: {rows[0]!r}")
    values = [float(f) for f in fields]
    score = values[7] if len(values) == 8 else None
    return LocalizerResult(Box3D.from_array(values[:7]), score)


def build_localizer(cfg: FusionConfig, workdir: Optional[Path] = None) -> Localizer:
    if cfg.localizer == "geometric":
        return GeometricBaselineLocalizer(dict(cfg.anchors))
    return ExternalLocalizer(cfg.localizer[len("external:"):], workdir)


# -- validation and orchestration ------------------------------------------


def down_weighted_score(s_rgb: float, iou_left: float, iou_right: float) -> float:
    return s_rgb * iou_left * iou_right


def validate_and_score(
    box: Box3D,
    left: Detection2D,
    right: Detection2D,
    calib: CalibrationFrame,
    tau_r: float,
    pair: int = 0,
    eps: float = DEPTH_EPS,
    native_score: Optional[float] = None,
) -> Optional[RecoveredPair]:
    """Accept a localized box iff one of its projections overlaps its 2D box by more than ``tau_r``."""
    proj_l = clipped_projection(box, calib, (pair, LEFT), eps)
    proj_r = clipped_projection(box, calib, (pair, RIGHT), eps)
    if proj_l is None and proj_r is None:
        return None
    iou_l = iou_axis_aligned(proj_l, left.box) if proj_l is not None else 0.0
    iou_r = iou_axis_aligned(proj_r, right.box) if proj_r is not None else 0.0
    if max(iou_l, iou_r) <= tau_r:
        return None
    best = left if left.score >= right.score else right
    return RecoveredPair(
        box=box,
        score=down_weighted_score(best.score, iou_l, iou_r),
        label=best.label,
        left=left,
        right=right,
        iou_left=iou_l,
        iou_right=iou_r,
        pair=pair,
        native_score=native_score,
    )


def recover_detections(
    unmatched: Mapping[View, Sequence[Detection2D]],
    cloud: np.ndarray,
    calib: CalibrationFrame,
    cfg: FusionConfig,
    localizer: Optional[Localizer] = None,
) -> List[RecoveredPair]:
    if localizer is None:
        localizer = build_localizer(cfg)
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 4)
    recovered: List[RecoveredPair] = []
    for pair in calib.pairs:
        lv, rv = (pair, LEFT), (pair, RIGHT)
        u_l = list(unmatched.get(lv, ()))
        u_r = list(unmatched.get(rv, ()))
        if not u_l or not u_r:
            continue
        F = fundamental_from_projections(calib.camera(lv), calib.camera(rv))
        pairs = match_stereo(u_l, u_r, F, cfg.d_max, cfg.epipolar_corners, cfg.stereo_class_gating)
        for left, right, _ in pairs:
            proposal = make_proposal(cloud, left, right, calib, cfg.enlargement, pair, cfg.depth_eps)
            if len(proposal) <= cfg.p_min:
                continue
            hint = left.label if left.score >= right.score else right.label
            try:
                located = localizer(proposal, hint, calib)
            except GeometryError:
                located = None
            if located is None:
                continue
            accepted = validate_and_score(
                located.box, left, right, calib, cfg.tau_r, pair, cfg.depth_eps, located.score
            )
            if accepted is not None:
                recovered.append(accepted)
    return recovered


def recovered_by_view(recovered: Sequence[RecoveredPair]) -> Dict[View, List[RecoveredPair]]:
    out: Dict[View, List[RecoveredPair]] = {}
    for rp in recovered:
        out.setdefault((rp.pair, LEFT), []).append(rp)
        out.setdefault((rp.pair, RIGHT), []).append(rp)
    return out
