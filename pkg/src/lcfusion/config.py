"""Pipeline configuration and its YAML representation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from .evaluation import DEFAULT_DIFFICULTY_THRESHOLDS, DEFAULT_IOU_THRESHOLDS

# (l, h, w) in meters
DEFAULT_ANCHORS: Dict[str, Tuple[float, float, float]] = {
    "Car": (3.9, 1.56, 1.6),
    "Pedestrian": (0.8, 1.73, 0.6),
    "Cyclist": (1.76, 1.73, 0.6),
}


class ConfigError(ValueError):
    pass


def _unit(name: str, value: float, *, closed_low: bool = True) -> None:
    ok = (0.0 <= value <= 1.0) if closed_low else (0.0 < value <= 1.0)
    if not ok:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class FusionConfig:
    """Every threshold and policy of the fusion pipeline.

    The LiDAR score / NMS thresholds (0.3), the RGB score threshold (0.5) and
    the 5% frustum enlargement are the published operating point; the rest
    are documented defaults (see README).
    """

    tau_b: float = 0.5
    tau_r: float = 0.3
    enlargement: float = 0.05
    p_min: int = 5
    lidar_score_thr: float = 0.3
    lidar_nms_iou: float = 0.3
    rgb_score_thr: float = 0.5
    d_max: float = 50.0
    classes: Tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    anchors: Mapping[str, Tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_ANCHORS))
    prior: str = "uniform"
    class_frequencies: Optional[Mapping[str, float]] = None
    localizer: str = "geometric"
    epipolar_corners: str = "tl_br"
    stereo_class_gating: bool = False
    depth_eps: float = 1e-6
    image_size: Tuple[int, int] = (1242, 375)
    unknown_class: str = "skip"
    ap_mode: str = "R40"
    eval_iou: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    difficulty: Mapping[str, Tuple[float, int, float]] = field(
        default_factory=lambda: dict(DEFAULT_DIFFICULTY_THRESHOLDS)
    )

    def __post_init__(self) -> None:
        for name in ("tau_b", "tau_r", "lidar_score_thr", "lidar_nms_iou", "rgb_score_thr"):
            _unit(name, getattr(self, name))
        if self.enlargement < 0:
            raise ConfigError(f"enlargement must be >= 0, got {self.enlargement}")
        if self.p_min < 0:
            raise ConfigError(f"p_min must be >= 0, got {self.p_min}")
        if self.d_max <= 0:
            raise ConfigError(f"d_max must be positive, got {self.d_max}")
        if len(self.classes) < 2:
            raise ConfigError("at least two classes are required")
        missing = [c for c in self.classes if c not in self.anchors]
        if missing:
            raise ConfigError(f"no anchor dimensions for classes {missing}")
        for c, dims in self.anchors.items():
            if len(dims) != 3 or min(dims) <= 0:
                raise ConfigError(f"anchor for {c} must be three positive numbers (l, h, w)")
        if self.prior not in ("uniform", "frequency"):
            raise ConfigError(f"prior must be 'uniform' or 'frequency', got {self.prior!r}")
        if self.prior == "frequency":
            freqs = self.class_frequencies or {}
            if any(freqs.get(c, 0.0) <= 0 for c in self.classes):
                raise ConfigError("frequency prior needs a positive class_frequencies entry per class")
        if not (self.localizer == "geometric" or self.localizer.startswith("external:")):
            raise ConfigError(f"localizer must be 'geometric' or 'external:<command>', got {self.localizer!r}")
        if self.epipolar_corners not in ("tl_br", "tr_bl"):
            raise ConfigError(f"epipolar_corners must be 'tl_br' or 'tr_bl', got {self.epipolar_corners!r}")
        if self.unknown_class not in ("skip", "error"):
            raise ConfigError(f"unknown_class must be 'skip' or 'error', got {self.unknown_class!r}")
        if self.ap_mode not in ("R40", "R11"):
            raise ConfigError(f"ap_mode must be 'R40' or 'R11', got {self.ap_mode!r}")
        for c, v in self.eval_iou.items():
            _unit(f"eval_iou[{c}]", v, closed_low=False)
        if self.depth_eps <= 0:
            raise ConfigError("depth_eps must be positive")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")

    def anchor(self, label: str) -> Tuple[float, float, float]:
        return tuple(self.anchors[label])

    def prior_vector(self) -> Dict[str, float]:
        if self.prior == "uniform":
            return {c: 1.0 / len(self.classes) for c in self.classes}
        total = sum(self.class_frequencies[c] for c in self.classes)
        return {c: self.class_frequencies[c] / total for c in self.classes}

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, Mapping):
                v = {k: list(x) if isinstance(x, tuple) else x for k, x in v.items()}
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FusionConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kwargs = dict(data)
        for key in ("classes", "image_size"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        for key in ("anchors", "difficulty"):
            if key in kwargs:
                kwargs[key] = {k: tuple(v) for k, v in kwargs[key].items()}
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def override(self, **changes: Any) -> "FusionConfig":
        merged = self.to_dict()
        merged.update(changes)
        return FusionConfig.from_dict(merged)


def load_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> FusionConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
        data.update(loaded)
    if overrides:
        data.update(overrides)
    return FusionConfig.from_dict(data)


def dump_config(cfg: FusionConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
