"""Detection records shared by the matching, recovery, fusion and I/O layers."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .geometry import Box2D, Box3D, View


@dataclass(frozen=True)
class Detection3D:
    box: Box3D
    score: float
    label: str
    id: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    def with_score(self, score: float, label: Optional[str] = None) -> "Detection3D":
        return replace(self, score=score, label=self.label if label is None else label)


@dataclass(frozen=True)
class Detection2D:
    box: Box2D
    score: float
    label: str
    view: View = (0, "l")

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    """Annotated object; ``bbox`` is the left-camera 2D box used for difficulty."""

    box: Box3D
    label: str
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = 0.0
    bbox: Optional[Box2D] = None

    @property
    def bbox_height(self) -> float:
        return 0.0 if self.bbox is None else self.bbox.height
