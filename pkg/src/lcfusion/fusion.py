"""Semantic fusion: label reconciliation and probabilistic score ensembling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .detections import Detection2D, Detection3D
from .geometry import Box3D, View

log = logging.getLogger(__name__)


class DegenerateEnsembleError(ValueError):
    """All classes received zero mass: the fused modalities contradict each other."""


@dataclass(frozen=True)
class ClassDistribution:
    classes: Tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.classes),):
            raise ValueError("one probability per class is required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability distribution: {p}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.classes.index(label)])

    @classmethod
    def uniform(cls, classes: Sequence[str]) -> "ClassDistribution":
        return cls(tuple(classes), np.full(len(classes), 1.0 / len(classes)))

    @classmethod
    def from_mapping(cls, classes: Sequence[str], weights: Mapping[str, float]) -> "ClassDistribution":
        w = np.array([weights[c] for c in classes], dtype=float)
        return cls(tuple(classes), w / w.sum())


@dataclass(frozen=True)
class FusedDetection:
    box: Box3D
    score: float
    label: str
    id: int = 0
    recovered: bool = False

    def as_detection(self) -> Detection3D:
        return Detection3D(self.box, self.score, self.label, self.id)


def score_to_distribution(score: float, label: str, classes: Sequence[str]) -> ClassDistribution:
    """Put ``score`` on ``label`` and spread the rest evenly over the other classes."""
    classes = tuple(classes)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    if label not in classes:
        raise ValueError(f"label {label!r} not in class set {classes}")
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must lie in [0, 1], got {score}")
    rest = (1.0 - score) / (len(classes) - 1)
    probs = np.full(len(classes), rest)
    probs[classes.index(label)] = score
    return ClassDistribution(classes, probs)


def probabilistic_ensemble(dists: Sequence[ClassDistribution], prior: ClassDistribution) -> ClassDistribution:
    """Fuse conditionally independent per-modality posteriors.

    ``p(y | x_1..x_L) ∝ prod_i p(y | x_i) / p(y)^(L-1)``.
    """
    if not dists:
        raise ValueError("at least one distribution is required")
    for d in dists:
        if d.classes != prior.classes:
            raise ValueError("all distributions must share the prior's class set")
    if len(dists) == 1:
        return dists[0]
    product = np.ones(len(prior.classes))
    for d in dists:
        product = product * d.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        unnorm = np.where(product > 0, product / prior.probs ** (len(dists) - 1), 0.0)
    total = unnorm.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateEnsembleError("ensemble assigns zero mass to every class")
    return ClassDistribution(prior.classes, unnorm / total)


FusionSets = Mapping[View, Sequence[Tuple[Detection3D, Detection2D]]]


def fuse_semantics(
    matched: FusionSets,
    classes: Sequence[str],
    prior: Optional[ClassDistribution] = None,
    recovered_ids: Sequence[int] = (),
) -> List[FusedDetection]:
    """Fuse every 3D detection with the 2D detections it is matched to.

    The label comes from the most confident 2D match; the score is that
    label's component of the ensemble over the 3D and all matched 2D
    distributions.
    """
    classes = tuple(classes)
    if prior is None:
        prior = ClassDistribution.uniform(classes)
    recovered_ids = set(recovered_ids)
    grouped: Dict[int, Tuple[Detection3D, List[Detection2D]]] = {}
    for view in sorted(matched):
        for det3d, det2d in matched[view]:
            entry = grouped.setdefault(det3d.id, (det3d, []))
            entry[1].append(det2d)

    fused: List[FusedDetection] = []
    for det_id in sorted(grouped):
        det3d, dets2d = grouped[det_id]
        if not dets2d:
            raise ValueError(f"3D detection {det_id} reached fusion without a 2D match")
        best = max(dets2d, key=lambda d: d.score)  # first view wins ties
        factors = [score_to_distribution(det3d.score, det3d.label, classes)]
        factors += [score_to_distribution(d.score, d.label, classes) for d in dets2d]
        try:
            score = probabilistic_ensemble(factors, prior)[best.label]
        except DegenerateEnsembleError:
            log.warning("contradictory certain scores for detection %d; keeping the RGB score", det_id)
            score = best.score
        score = min(max(score, 0.0), 1.0)
        fused.append(FusedDetection(det3d.box, score, best.label, det_id, det_id in recovered_ids))
    return fused
