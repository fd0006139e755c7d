"""KITTI-protocol metrics: rotated BEV / 3D IoU, difficulty tiers and AP."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .detections import Detection3D, GroundTruth
from .geometry import Box3D


class DifficultyTier(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


# (min 2D height px, max occlusion level, max truncation) per tier, KITTI devkit values
DEFAULT_DIFFICULTY_THRESHOLDS: Dict[str, Tuple[float, int, float]] = {
    "EASY": (40.0, 0, 0.15),
    "MODERATE": (25.0, 1, 0.30),
    "HARD": (25.0, 2, 0.50),
}

DEFAULT_IOU_THRESHOLDS: Dict[str, float] = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}

METRICS = ("3d", "bev")


# -- rotated overlaps -------------------------------------------------------


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a convex CCW polygon."""
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for k in range(n):
        if not output:
            break
        a = clipper[k]
        b = clipper[(k + 1) % n]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inputs = output
        output = []
        prev = inputs[-1]
        s_prev = side(prev)
        for cur in inputs:
            s_cur = side(cur)
            if s_cur >= 0.0:
                if s_prev < 0.0:
                    output.append(_crossing(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0.0:
                output.append(_crossing(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=float).reshape(-1, 2)


def _crossing(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    ca = a.bev_corners()
    cb = b.bev_corners()
    # cheap reject on circumscribed circles
    ra = 0.5 * np.hypot(a.l, a.w)
    rb = 0.5 * np.hypot(b.l, b.w)
    if np.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    return max(_polygon_area(_clip_polygon(ca, cb)), 0.0)


def rotated_bev_iou(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    union = a.l * a.w + b.l * b.w - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_3d(a: Box3D, b: Box3D) -> float:
    dz = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h) - max(a.z - 0.5 * a.h, b.z - 0.5 * b.h)
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def overlap(a: Box3D, b: Box3D, metric: str) -> float:
    if metric == "3d":
        return iou_3d(a, b)
    if metric == "bev":
        return rotated_bev_iou(a, b)
    raise ValueError(f"unknown metric {metric!r}")


# -- difficulty ------------------------------------------------------------


def assign_difficulty(
    gt: GroundTruth, thresholds: Mapping[str, Tuple[float, int, float]] = DEFAULT_DIFFICULTY_THRESHOLDS
) -> DifficultyTier:
    """Easiest tier whose height/occlusion/truncation limits the annotation meets."""
    for tier in (DifficultyTier.EASY, DifficultyTier.MODERATE, DifficultyTier.HARD):
        min_height, max_occ, max_trunc = thresholds[tier.name]
        if gt.bbox_height >= min_height and gt.occlusion <= max_occ and gt.truncation <= max_trunc:
            return tier
    return DifficultyTier.IGNORED


# -- average precision ----------------------------------------------------


@dataclass
class PRCurve:
    scores: List[float]
    tp: List[int]
    fp: List[int]
    n_gt: int

    @property
    def recall(self) -> List[float]:
        return [t / self.n_gt for t in self.tp] if self.n_gt else []

    @property
    def precision(self) -> List[float]:
        return [t / (t + f) for t, f in zip(self.tp, self.fp)]


def _recall_levels(mode: str) -> List[Tuple[int, int]]:
    """Recall sample points as exact fractions (numerator, denominator)."""
    if mode == "R40":
        return [(i, 40) for i in range(1, 41)]
    if mode == "R11":
        return [(i, 10) for i in range(0, 11)]
    raise ValueError(f"unknown AP interpolation mode {mode!r}")


def pr_curve(
    dets: Sequence[Sequence[Detection3D]],
    gts: Sequence[Sequence[GroundTruth]],
    label: str,
    difficulty: DifficultyTier,
    iou_thr: float,
    metric: str = "3d",
    thresholds: Mapping[str, Tuple[float, int, float]] = DEFAULT_DIFFICULTY_THRESHOLDS,
) -> PRCurve:
    """Greedy score-ordered matching, one list of detections/GTs per frame."""
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} detection frames but {len(gts)} ground-truth frames")
    outcomes: List[Tuple[float, int, int, bool]] = []
    n_gt = 0
    for frame, (frame_dets, frame_gts) in enumerate(zip(dets, gts)):
        cls_gts = [g for g in frame_gts if g.label == label]
        counted = [
            assign_difficulty(g, thresholds) <= difficulty for g in cls_gts
        ]
        n_gt += sum(counted)
        taken = [False] * len(cls_gts)
        cls_dets = sorted(
            (d for d in frame_dets if d.label == label), key=lambda d: (-d.score, d.id)
        )
        for order, det in enumerate(cls_dets):
            best, best_iou = -1, iou_thr
            ignored = -1
            for k, gt in enumerate(cls_gts):
                if taken[k]:
                    continue
                o = overlap(det.box, gt.box, metric)
                if o < iou_thr:
                    continue
                if counted[k]:
                    if best < 0 or o > best_iou:
                        best, best_iou = k, o
                elif ignored < 0:
                    ignored = k
            if best >= 0:
                taken[best] = True
                outcomes.append((det.score, frame, order, True))
            elif ignored >= 0:
                taken[ignored] = True
            else:
                outcomes.append((det.score, frame, order, False))

    outcomes.sort(key=lambda o: (-o[0], o[1], o[2]))
    tp = fp = 0
    curve = PRCurve([], [], [], n_gt)
    for score, _, _, is_tp in outcomes:
        if is_tp:
            tp += 1
        else:
            fp += 1
        curve.scores.append(score)
        curve.tp.append(tp)
        curve.fp.append(fp)
    return curve


def average_precision(curve: PRCurve, mode: str = "R40") -> Optional[float]:
    """Interpolated AP of a PR curve; ``None`` when there is no ground truth."""
    if curve.n_gt == 0:
        return None
    levels = _recall_levels(mode)
    total = 0.0
    for num, den in levels:
        best = 0.0
        for t, f in zip(curve.tp, curve.fp):
            # recall >= num/den, evaluated exactly in integers
            if t * den >= num * curve.n_gt and t + f > 0:
                best = max(best, t / (t + f))
        total += best
    return total / len(levels)


def compute_ap(
    dets: Sequence[Sequence[Detection3D]],
    gts: Sequence[Sequence[GroundTruth]],
    label: str,
    difficulty: DifficultyTier,
    iou_thr: float,
    metric: str = "3d",
    mode: str = "R40",
    thresholds: Mapping[str, Tuple[float, int, float]] = DEFAULT_DIFFICULTY_THRESHOLDS,
) -> Optional[float]:
    curve = pr_curve(dets, gts, label, difficulty, iou_thr, metric, thresholds)
    return average_precision(curve, mode)


# -- reports --------------------------------------------------------------


@dataclass
class EvalReport:
    mode: str
    ap: Dict[Tuple[str, str, str], Optional[float]] = field(default_factory=dict)
    curves: Dict[Tuple[str, str, str], List[Tuple[float, float]]] = field(default_factory=dict)

    def rows(self) -> List[Tuple[str, str, str, Optional[float]]]:
        return [(c, d, m, v) for (c, d, m), v in self.ap.items()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "difficulty", "metric", "ap"])
        for c, d, m, v in self.rows():
            writer.writerow([c, d, m, "" if v is None else f"{v:.6f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "results": [
                {
                    "class": c,
                    "difficulty": d,
                    "metric": m,
                    "ap": v,
                    "curve": [list(p) for p in self.curves.get((c, d, m), [])],
                }
                for c, d, m, v in self.rows()
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def format_table(self) -> str:
        classes = list(dict.fromkeys(c for c, _, _ in self.ap))
        tiers = [t.name for t in (DifficultyTier.EASY, DifficultyTier.MODERATE, DifficultyTier.HARD)]
        lines = [f"AP ({self.mode})".ljust(22) + "".join(t.capitalize().rjust(10) for t in tiers)]
        for c in classes:
            for m in METRICS:
                cells = []
                for t in tiers:
                    v = self.ap.get((c, t, m))
                    cells.append(("-" if v is None else f"{100 * v:.2f}").rjust(10))
                lines.append(f"{c} {m.upper()}".ljust(22) + "".join(cells))
        return "\n".join(lines)


def evaluate(
    dets: Sequence[Sequence[Detection3D]],
    gts: Sequence[Sequence[GroundTruth]],
    classes: Sequence[str],
    iou_thresholds: Mapping[str, float] = DEFAULT_IOU_THRESHOLDS,
    mode: str = "R40",
    thresholds: Mapping[str, Tuple[float, int, float]] = DEFAULT_DIFFICULTY_THRESHOLDS,
) -> EvalReport:
    report = EvalReport(mode=mode)
    for label in classes:
        iou_thr = iou_thresholds.get(label, 0.5)
        for tier in (DifficultyTier.EASY, DifficultyTier.MODERATE, DifficultyTier.HARD):
            for metric in METRICS:
                curve = pr_curve(dets, gts, label, tier, iou_thr, metric, thresholds)
                key = (label, tier.name, metric)
                report.ap[key] = average_precision(curve, mode)
                report.curves[key] = list(zip(curve.recall, curve.precision))
    return report
