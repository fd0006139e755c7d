"""Command-line entry point: ``lcfusion fuse | eval | synth``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .config import ConfigError, FusionConfig, load_config
from .evaluation import evaluate
from .geometry import LEFT, RIGHT, GeometryError
from .kitti_io import (
    KittiFormatError,
    format_results,
    read_calibration,
    read_detections,
    read_point_cloud,
)
from .pipeline import fuse_frame
from .synthetic import DATASET_DIRS, DegradationSpec, SceneConfig, export_scene, generate_scene, simulate_detectors

log = logging.getLogger("lcfusion")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_override(text: str) -> Tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects key=value, got {text!r}")
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise UsageError(f"--set {key}: cannot parse value {raw!r}: {exc}") from None


def _config(args: argparse.Namespace) -> FusionConfig:
    overrides = dict(_parse_override(s) for s in args.set or [])
    return load_config(args.config, overrides)


def _require_dir(path: Path, flag: str) -> Path:
    if not path.is_dir():
        raise DataError(f"{flag}: no such directory: {path}")
    return path


def _stems(directory: Path, suffix: str) -> List[str]:
    return sorted(p.stem for p in directory.glob(f"*{suffix}"))


# -- fuse --------------------------------------------------------------------


def _fuse_one(stem: str, dirs: Dict[str, Path], cfg_dict: Dict[str, Any]) -> str:
    cfg = FusionConfig.from_dict(cfg_dict)
    calib = read_calibration(dirs["calib"] / f"{stem}.txt", cfg.image_size)
    lidar = read_detections(
        dirs["lidar"] / f"{stem}.txt", "result", "3d", calib, cfg.classes, cfg.unknown_class
    )
    rgb = {
        view: read_detections(dirs[key] / f"{stem}.txt", "result", "2d", None, cfg.classes, cfg.unknown_class, view)
        for key, view in (("left", (0, LEFT)), ("right", (0, RIGHT)))
    }
    cloud = read_point_cloud(dirs["clouds"] / f"{stem}.bin")
    result = fuse_frame(lidar, rgb, cloud, calib, cfg)
    return format_results([d.as_detection() for d in result.detections], calib)


def _fuse_guarded(stem: str, dirs: Dict[str, Path], cfg_dict: Dict[str, Any]) -> Tuple[str, Optional[str], str]:
    try:
        return stem, None, _fuse_one(stem, dirs, cfg_dict)
    except (KittiFormatError, GeometryError, OSError, ValueError, subprocess.SubprocessError) as exc:
        return stem, f"frame {stem}: {exc}", ""


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = _config(args)
    dirs = {
        "lidar": _require_dir(args.lidar_dets, "--lidar-dets"),
        "left": _require_dir(args.dets_left, "--dets-left"),
        "right": _require_dir(args.dets_right, "--dets-right"),
        "calib": _require_dir(args.calib, "--calib"),
        "clouds": _require_dir(args.clouds, "--clouds"),
    }
    stems = _stems(dirs["lidar"], ".txt")
    for key, suffix in (("left", ".txt"), ("right", ".txt"), ("calib", ".txt"), ("clouds", ".bin")):
        missing = sorted(set(stems) - set(_stems(dirs[key], suffix)))
        if missing:
            raise DataError(f"frame {missing[0]}: no {suffix} file in {dirs[key]} ({len(missing)} frame(s) missing)")
    args.out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    cfg_dict = cfg.to_dict()
    if args.jobs > 1 and len(stems) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_fuse_guarded, stems, [dirs] * len(stems), [cfg_dict] * len(stems)))
    else:
        outcomes = [_fuse_guarded(s, dirs, cfg_dict) for s in stems]
    for stem, error, text in outcomes:
        if error is not None:
            raise DataError(error)
        (args.out / f"{stem}.txt").write_text(text)
    elapsed = time.perf_counter() - t0
    per_frame = 1000.0 * elapsed / max(len(stems), 1)
    print(f"fused {len(stems)} frame(s) in {elapsed:.2f} s ({per_frame:.1f} ms/frame, jobs={args.jobs})", file=sys.stderr)
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    results_dir = _require_dir(args.results, "--results")
    gt_dir = _require_dir(args.gt, "--gt")
    calib_dir = _require_dir(args.calib, "--calib")
    stems = _stems(gt_dir, ".txt")
    if not stems:
        raise DataError(f"--gt: no label files in {gt_dir}")

    t0 = time.perf_counter()
    dets, gts = [], []
    for stem in stems:
        calib_path = calib_dir / f"{stem}.txt"
        if not calib_path.exists():
            raise DataError(f"frame {stem}: no calibration file in {calib_dir}")
        calib = read_calibration(calib_path, cfg.image_size)
        gts.append(read_detections(gt_dir / f"{stem}.txt", "label", "3d", calib, cfg.classes, cfg.unknown_class))
        res_path = results_dir / f"{stem}.txt"
        # KITTI convention: a frame without a result file has no detections
        dets.append(
            read_detections(res_path, "result", "3d", calib, cfg.classes, cfg.unknown_class)
            if res_path.exists()
            else []
        )
    report = evaluate(dets, gts, cfg.classes, cfg.eval_iou, cfg.ap_mode, cfg.difficulty)
    print(report.format_table())
    (results_dir / "eval_report.json").write_text(report.to_json() + "\n")
    (results_dir / "eval_report.csv").write_text(report.to_csv())
    print(f"evaluated {len(stems)} frame(s) in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return EXIT_OK


# -- synth -------------------------------------------------------------------


def frame_seed(seed: int, index: int) -> int:
    """Independent per-frame seed, stable across runs and platforms."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_synth(args: argparse.Namespace) -> int:
    if args.frames < 0 or args.objects < 0:
        raise UsageError("--frames and --objects must be non-negative")
    try:
        spec = DegradationSpec.load(args.degradation) if args.degradation else DegradationSpec()
    except (OSError, ValueError, yaml.YAMLError) as exc:
        raise UsageError(f"--degradation: {exc}") from None
    scene_cfg = SceneConfig()
    root: Path = args.out
    t0 = time.perf_counter()
    try:
        for sub in DATASET_DIRS.values():
            (root / sub).mkdir(parents=True, exist_ok=True)
        for i in range(args.frames):
            s = frame_seed(args.seed, i)
            scene = generate_scene(s, args.objects, scene_cfg)
            lidar, rgb = simulate_detectors(scene, spec, s)
            export_scene(scene, lidar, rgb, root, f"{i:06d}")
    except OSError as exc:
        raise DataError(f"cannot write dataset under {root}: {exc}") from None
    print(f"wrote {args.frames} frame(s) to {root} in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcfusion", description="Late-cascade LiDAR/stereo-camera detection fusion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="YAML configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")

    fuse = sub.add_parser("fuse", help="fuse per-frame LiDAR and stereo detections")
    fuse.add_argument("--lidar-dets", type=Path, required=True)
    fuse.add_argument("--dets-left", type=Path, required=True)
    fuse.add_argument("--dets-right", type=Path, required=True)
    fuse.add_argument("--calib", type=Path, required=True)
    fuse.add_argument("--clouds", type=Path, required=True)
    fuse.add_argument("--out", type=Path, required=True)
    fuse.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    config_flags(fuse)
    fuse.set_defaults(func=cmd_fuse)

    ev = sub.add_parser("eval", help="KITTI-style AP of results against labels")
    ev.add_argument("--results", type=Path, required=True)
    ev.add_argument("--gt", type=Path, required=True)
    ev.add_argument("--calib", type=Path, required=True)
    config_flags(ev)
    ev.set_defaults(func=cmd_eval)

    syn = sub.add_parser("synth", help="write a synthetic dataset in the KITTI layout")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--frames", type=int, required=True)
    syn.add_argument("--objects", type=int, default=6, help="objects per frame (default 6)")
    syn.add_argument("--out", type=Path, required=True)
    syn.add_argument("--degradation", type=Path, help="YAML degradation spec")
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"lcfusion: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, KittiFormatError) as exc:
        print(f"lcfusion: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
