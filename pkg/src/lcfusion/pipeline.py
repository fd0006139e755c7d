"""Per-frame late-cascade fusion: matching, recovery, semantic fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import FusionConfig
from .detections import Detection2D, Detection3D
from .evaluation import rotated_bev_iou
from .fusion import ClassDistribution, FusedDetection, fuse_semantics
from .geometry import LEFT, RIGHT, CalibrationFrame, View
from .matching import MatchSet, match_boxes, preprocess_lidar
from .recovery import Localizer, RecoveredPair, build_localizer, recover_detections


@dataclass
class FrameResult:
    detections: List[FusedDetection]
    matches: MatchSet
    recovered: List[RecoveredPair] = field(default_factory=list)


def dedup_recovered(
    recovered: Sequence[RecoveredPair], survivors: Sequence[Detection3D], iou_thr: float
) -> List[RecoveredPair]:
    """Drop recovered boxes overlapping a surviving LiDAR box or a better recovered one."""
    order = sorted(recovered, key=lambda r: -r.score)
    kept: List[RecoveredPair] = []
    for rp in order:
        if any(rotated_bev_iou(rp.box, s.box) > iou_thr for s in survivors):
            continue
        if any(rotated_bev_iou(rp.box, k.box) > iou_thr for k in kept):
            continue
        kept.append(rp)
    return kept


def fuse_frame(
    lidar: Sequence[Detection3D],
    rgb: Mapping[View, Sequence[Detection2D]],
    cloud: np.ndarray,
    calib: CalibrationFrame,
    cfg: FusionConfig,
    localizer: Optional[Localizer] = None,
) -> FrameResult:
    rgb = {v: [d for d in dets if d.score >= cfg.rgb_score_thr] for v, dets in rgb.items()}
    lidar = preprocess_lidar(lidar, cfg.lidar_score_thr, cfg.lidar_nms_iou)
    matches = match_boxes(lidar, rgb, calib, cfg.tau_b, cfg.depth_eps)

    recovered = recover_detections(
        matches.unmatched, cloud, calib, cfg, localizer if localizer is not None else build_localizer(cfg)
    )
    recovered = dedup_recovered(recovered, matches.survivors, cfg.lidar_nms_iou)

    by_id = {d.id: d for d in matches.survivors}
    sets: Dict[View, List[Tuple[Detection3D, Detection2D]]] = {
        view: [(by_id[m.det_id], m.det2d) for m in ms] for view, ms in matches.matches.items()
    }
    next_id = max((d.id for d in lidar), default=-1) + 1
    recovered_ids = []
    for k, rp in enumerate(recovered):
        det = Detection3D(rp.box, rp.score, rp.label, next_id + k)
        recovered_ids.append(det.id)
        sets.setdefault((rp.pair, LEFT), []).append((det, rp.left))
        sets.setdefault((rp.pair, RIGHT), []).append((det, rp.right))

    prior = ClassDistribution.from_mapping(cfg.classes, cfg.prior_vector())
    fused = fuse_semantics(sets, cfg.classes, prior, recovered_ids)
    return FrameResult(fused, matches, recovered)
