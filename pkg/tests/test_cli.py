from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from lcfusion.cli import frame_seed, main
from lcfusion.config import FusionConfig
from lcfusion.evaluation import evaluate
from lcfusion.kitti_io import read_calibration, read_detections


def run(*argv) -> int:
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code)


def synth(root: Path, frames=3, seed=0, *extra) -> Path:
    assert run("synth", "--seed", seed, "--frames", frames, "--out", root, *extra) == 0
    return root


def fuse_args(data: Path, out: Path, *extra):
    return (
        "fuse", "--lidar-dets", data / "lidar_dets", "--dets-left", data / "dets_left",
        "--dets-right", data / "dets_right", "--calib", data / "calib", "--clouds", data / "velodyne",
        "--out", out, *extra,
    )


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("data")
    (root / "deg.yaml").write_text("lidar_dropout: 0.3\nlidar_fp_rate: 0.2\ncenter_noise: 0.05\nbox2d_jitter: 1.0\n")
    return synth(root / "set", 4, 7, "--degradation", root / "deg.yaml")


def test_golden_run(dataset, tmp_path, capsys):
    out = tmp_path / "fused"
    assert run(*fuse_args(dataset, out)) == 0
    assert sorted(p.name for p in out.glob("*.txt")) == [f"{i:06d}.txt" for i in range(4)]
    assert run("eval", "--results", out, "--gt", dataset / "label_2", "--calib", dataset / "calib") == 0
    table = capsys.readouterr().out
    assert "Car 3D" in table and "Moderate" in table
    payload = json.loads((out / "eval_report.json").read_text())
    assert payload["mode"] == "R40" and len(payload["results"]) == 3 * 3 * 2
    assert (out / "eval_report.csv").read_text().startswith("class,difficulty,metric,ap\n")


def test_report_equals_direct_evaluation(dataset, tmp_path):
    out = tmp_path / "fused"
    assert run(*fuse_args(dataset, out)) == 0
    assert run("eval", "--results", out, "--gt", dataset / "label_2", "--calib", dataset / "calib") == 0
    cfg = FusionConfig()
    dets, gts = [], []
    for i in range(4):
        calib = read_calibration(dataset / "calib" / f"{i:06d}.txt")
        dets.append(read_detections(out / f"{i:06d}.txt", "result", "3d", calib, cfg.classes))
        gts.append(read_detections(dataset / "label_2" / f"{i:06d}.txt", "label", "3d", calib, cfg.classes))
    direct = evaluate(dets, gts, cfg.classes)
    reported = {
        (r["class"], r["difficulty"], r["metric"]): r["ap"]
        for r in json.loads((out / "eval_report.json").read_text())["results"]
    }
    assert reported == direct.ap


def test_ground_truth_as_results_scores_one(dataset, tmp_path, capsys):
    gt_dir = dataset / "label_2"
    results = tmp_path / "res"
    results.mkdir()
    for p in gt_dir.glob("*.txt"):
        # a label row plus a score column is a result row
        rows = [line + " 1.0" for line in p.read_text().splitlines()]
        (results / p.name).write_text("\n".join(rows) + ("\n" if rows else ""))
    assert run("eval", "--results", results, "--gt", gt_dir, "--calib", dataset / "calib") == 0
    payload = json.loads((results / "eval_report.json").read_text())
    assert all(r["ap"] in (None, 1.0) for r in payload["results"])
    assert any(r["ap"] == 1.0 for r in payload["results"])


def test_empty_results_score_zero(dataset, tmp_path):
    results = tmp_path / "empty"
    results.mkdir()
    assert run("eval", "--results", results, "--gt", dataset / "label_2", "--calib", dataset / "calib") == 0
    payload = json.loads((results / "eval_report.json").read_text())
    assert all(r["ap"] in (None, 0.0) for r in payload["results"])


def test_synth_same_seed_identical(tmp_path):
    a = tree_bytes(synth(tmp_path / "a", 3, 11))
    b = tree_bytes(synth(tmp_path / "b", 3, 11))
    c = tree_bytes(synth(tmp_path / "c", 3, 12))
    assert a == b
    assert a != c


def test_synth_zero_frames(tmp_path):
    root = synth(tmp_path / "z", 0)
    subdirs = sorted(p.name for p in root.iterdir())
    assert subdirs == ["calib", "dets_left", "dets_right", "label_2", "lidar_dets", "velodyne"]
    assert not any(p.is_file() for p in root.rglob("*"))


def test_frame_seed_is_stable_and_distinct():
    assert frame_seed(0, 1) == frame_seed(0, 1)
    assert len({frame_seed(s, i) for s in range(5) for i in range(20)}) == 100


def test_jobs_do_not_change_output(dataset, tmp_path):
    assert run(*fuse_args(dataset, tmp_path / "one", "--jobs", 1)) == 0
    assert run(*fuse_args(dataset, tmp_path / "two", "--jobs", 2)) == 0
    assert tree_bytes(tmp_path / "one") == tree_bytes(tmp_path / "two")


def test_missing_directory_is_data_error(dataset, tmp_path, capsys):
    args = list(fuse_args(dataset, tmp_path / "o"))
    args[args.index("--calib") + 1] = tmp_path / "nope"
    assert run(*args) == 2
    assert "--calib" in capsys.readouterr().err


def test_missing_frame_is_named(dataset, tmp_path, capsys):
    clouds = tmp_path / "clouds"
    clouds.mkdir()
    for p in (dataset / "velodyne").glob("*.bin"):
        if p.stem != "000002":
            (clouds / p.name).write_bytes(p.read_bytes())
    args = list(fuse_args(dataset, tmp_path / "o"))
    args[args.index("--clouds") + 1] = clouds
    assert run(*args) == 2
    assert "000002" in capsys.readouterr().err


def test_malformed_frame_is_named(dataset, tmp_path, capsys):
    left = tmp_path / "left"
    left.mkdir()
    for p in (dataset / "dets_left").glob("*.txt"):
        (left / p.name).write_text(p.read_text())
    (left / "000001.txt").write_text("Car 0 0 0\n")
    args = list(fuse_args(dataset, tmp_path / "o"))
    args[args.index("--dets-left") + 1] = left
    assert run(*args) == 2
    assert "000001" in capsys.readouterr().err


@pytest.mark.parametrize("override", ["tau_b=1.5", "tau_q=0.1", "tau_b"])
def test_bad_config_is_usage_error(dataset, tmp_path, override):
    assert run(*fuse_args(dataset, tmp_path / "o", "--set", override)) == 1


def test_config_file_is_applied(dataset, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("classes: [Car, Pedestrian]\n")
    out = tmp_path / "o"
    assert run(*fuse_args(dataset, out, "--config", cfg)) == 0
    labels = {line.split()[0] for p in out.glob("*.txt") for line in p.read_text().splitlines()}
    assert labels and labels <= {"Car", "Pedestrian"}


def test_failing_external_localizer_is_data_error(tmp_path, capsys):
    data = synth(tmp_path / "d", 2, 3, "--degradation", _write(tmp_path / "deg.yaml", "lidar_dropout: 1.0\n"))
    loc = f"external:{sys.executable} -c 'raise SystemExit(3)'"
    assert run(*fuse_args(data, tmp_path / "o", "--set", f"localizer={loc}")) == 2
    assert "frame 00000" in capsys.readouterr().err


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_usage_errors(tmp_path):
    assert run() == 1
    assert run("fuse") == 1
    assert run("synth", "--frames", -1, "--out", tmp_path) == 1
    assert run(*fuse_args(tmp_path, tmp_path / "o", "--jobs", 0)) == 1


def test_empty_gt_dir_is_an_error(dataset, tmp_path):
    (tmp_path / "gt").mkdir()
    assert run("eval", "--results", tmp_path, "--gt", tmp_path / "gt", "--calib", dataset / "calib") != 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "lcfusion.cli", "synth", "--frames", "1", "--out", str(tmp_path / "d")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "d" / "velodyne" / "000000.bin").exists()
