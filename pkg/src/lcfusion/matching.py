"""LiDAR-to-image box matching and false-positive pruning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .assignment import FORBIDDEN, solve_assignment
from .detections import Detection2D, Detection3D
from .evaluation import rotated_bev_iou
from .geometry import DEPTH_EPS, Box2D, Box3D, CalibrationFrame, View, iou_axis_aligned, project_box


class ConfigurationError(KeyError):
    """A detection refers to a view the calibration does not declare."""


@dataclass(frozen=True)
class Match:
    det_id: int
    det2d: Detection2D
    iou: float


@dataclass
class MatchSet:
    matches: Dict[View, List[Match]] = field(default_factory=dict)
    unmatched: Dict[View, List[Detection2D]] = field(default_factory=dict)
    survivors: List[Detection3D] = field(default_factory=list)

    def matches_for(self, det_id: int) -> Dict[View, Match]:
        return {v: m for v, ms in self.matches.items() for m in ms if m.det_id == det_id}


def bev_nms(dets: Sequence[Detection3D], iou_thr: float) -> List[Detection3D]:
    """Greedy NMS on rotated BEV IoU, highest score first (ties by id)."""
    order = sorted(dets, key=lambda d: (-d.score, d.id))
    kept: List[Detection3D] = []
    for det in order:
        if all(rotated_bev_iou(det.box, k.box) <= iou_thr for k in kept):
            kept.append(det)
    return kept


def preprocess_lidar(dets: Sequence[Detection3D], score_thr: float, nms_iou: float) -> List[Detection3D]:
    return bev_nms([d for d in dets if d.score >= score_thr], nms_iou)


def clipped_projection(box: Box3D, calib: CalibrationFrame, view: View, eps: float = DEPTH_EPS) -> Optional[Box2D]:
    """Projected box clamped to the image; ``None`` if nothing lands in front of or inside it."""
    cam = calib.camera(view)
    proj = project_box(box, calib, view, eps)
    return None if proj is None else proj.clip(cam.width, cam.height)


def projected_boxes(
    dets: Sequence[Detection3D], calib: CalibrationFrame, view: View, eps: float = DEPTH_EPS
) -> List[Optional[Box2D]]:
    return [clipped_projection(d.box, calib, view, eps) for d in dets]


def match_view(
    projections: Sequence[Optional[Box2D]], rgb: Sequence[Detection2D], tau_b: float
):
    """IoU-maximising assignment in one view.

    Returns ``(matches, unmatched)`` where ``matches`` holds ``(row, rgb index,
    iou)`` triples that cleared ``tau_b``.
    """
    iou = np.zeros((len(projections), len(rgb)))
    for p, proj in enumerate(projections):
        if proj is None:
            iou[p, :] = FORBIDDEN
            continue
        for r, det in enumerate(rgb):
            iou[p, r] = iou_axis_aligned(proj, det.box)
    result = solve_assignment(iou, maximize=True)
    kept = [(p, r, float(iou[p, r])) for p, r in result.pairs if iou[p, r] >= tau_b]
    used = {r for _, r, _ in kept}
    unmatched = [det for r, det in enumerate(rgb) if r not in used]
    return kept, unmatched


def match_boxes(
    lidar: Sequence[Detection3D],
    rgb: Mapping[View, Sequence[Detection2D]],
    calib: CalibrationFrame,
    tau_b: float,
    eps: float = DEPTH_EPS,
) -> MatchSet:
    """Match LiDAR detections to 2D detections per view and prune the unmatched.

    Every view declared in the calibration takes part, with or without RGB
    detections. LiDAR detections without a match in any view are dropped.
    """
    for view in rgb:
        if view not in calib.views:
            raise ConfigurationError(f"RGB detections given for view {view} but no camera is declared for it")
    # canonical order so the result does not depend on input ordering
    lidar = sorted(lidar, key=lambda d: d.id)
    if len({d.id for d in lidar}) != len(lidar):
        raise ValueError("LiDAR detection ids must be unique")
    result = MatchSet()
    matched_ids = set()
    for view in calib.views:
        dets2d = sorted(rgb.get(view, ()), key=lambda d: (d.box.as_tuple(), -d.score, d.label))
        projections = projected_boxes(lidar, calib, view, eps)
        kept, unmatched = match_view(projections, dets2d, tau_b)
        result.matches[view] = [Match(lidar[p].id, dets2d[r], iou) for p, r, iou in kept]
        result.unmatched[view] = unmatched
        matched_ids.update(lidar[p].id for p, _, _ in kept)
    result.survivors = [d for d in lidar if d.id in matched_ids]
    return result
