from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcfusion.detections import Detection2D, Detection3D, GroundTruth
from lcfusion.geometry import LEFT, RIGHT, Box2D, Box3D, box3d_corners, enclosing_aabb, project_points, transform_points
from lcfusion.kitti_io import (
    KittiFormatError,
    box_to_kitti,
    format_calibration,
    format_results,
    kitti_to_box,
    parse_calibration,
    read_calibration,
    read_detections,
    read_point_cloud,
    write_calibration,
    write_detections_2d,
    write_labels,
    write_point_cloud,
    write_results,
)
from lcfusion.synthetic import make_calibration

# calibration of a KITTI object-benchmark training frame
KITTI_CALIB = """\
P0: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 0.000000000000e+00 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.875744000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 4.485728000000e+01 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.163791000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.745884000000e-03
P3: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.395242000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.199936000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.729905000000e-03
R0_rect: 9.999239000000e-01 9.837760000000e-03 -7.445048000000e-03 -9.869795000000e-03 9.999421000000e-01 -4.278459000000e-03 7.402527000000e-03 4.351614000000e-03 9.999631000000e-01
Tr_velo_to_cam: 7.533745000000e-03 -9.999714000000e-01 -6.166020000000e-04 -4.069766000000e-03 1.480249000000e-02 7.280733000000e-04 -9.998902000000e-01 -7.631618000000e-02 9.998621000000e-01 7.523790000000e-03 1.480755000000e-02 -2.717806000000e-01
Tr_imu_to_velo: 9.999976000000e-01 7.553071000000e-04 -2.035826000000e-03 -8.086759000000e-01 -7.854027000000e-04 9.998898000000e-01 -1.482298000000e-02 3.195559000000e-01 2.024406000000e-03 1.482454000000e-02 9.998881000000e-01 -7.997231000000e-01
"""

L, R = (0, LEFT), (0, RIGHT)
CLASSES = ("Car", "Pedestrian", "Cyclist")


def identity_rows(p2=None):
    eye = "1 0 0 0 0 1 0 0 0 0 1 0"
    return (
        f"P2: {p2 or eye}\nP3: 1 0 0 -0.5 0 1 0 0 0 0 1 0\n"
        "R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    )


def random_box(rng) -> Box3D:
    return Box3D(
        rng.uniform(5, 45), rng.uniform(-15, 15), rng.uniform(-2, 0.5),
        rng.uniform(0.5, 5), rng.uniform(0.8, 2.5), rng.uniform(0.4, 2.2), rng.uniform(-math.pi, math.pi),
    )


def kitti_fields(box: Box3D, T: np.ndarray) -> np.ndarray:
    (h, w, l), loc, ry = box_to_kitti(box, T)
    return np.array([h, w, l, *loc, ry])


def assert_kitti_close(a: Box3D, b: Box3D, T: np.ndarray, tol: float = 1e-4) -> None:
    fa, fb = kitti_fields(a, T), kitti_fields(b, T)
    np.testing.assert_allclose(fa[:6], fb[:6], atol=tol, rtol=0)
    assert abs(math.remainder(fa[6] - fb[6], 2 * math.pi)) <= tol


# -- calibration -------------------------------------------------------------


def test_identity_camera():
    calib = parse_calibration(identity_rows())
    np.testing.assert_array_equal(calib.camera(L).P, np.hstack([np.eye(3), np.zeros((3, 1))]))
    np.testing.assert_array_equal(calib.T, np.eye(4))


def test_eleven_floats_is_an_error():
    with pytest.raises(KittiFormatError, match=r":1: key P2 needs 12"):
        parse_calibration(identity_rows("1 0 0 0 0 1 0 0 0 0 1"))


def test_missing_key_and_bad_token():
    with pytest.raises(KittiFormatError, match="missing key Tr_velo_to_cam"):
        parse_calibration("\n".join(identity_rows().splitlines()[:3]))
    with pytest.raises(KittiFormatError, match=r":3: non-numeric value under key R0_rect"):
        parse_calibration(identity_rows().replace("R0_rect: 1", "R0_rect: one"))


def test_kitti_sample_composes_rectification():
    calib = parse_calibration(KITTI_CALIB)
    R0 = np.eye(4)
    R0[:3, :3] = np.array(KITTI_CALIB.splitlines()[4].split()[1:], dtype=float).reshape(3, 3)
    Tr = np.eye(4)
    Tr[:3] = np.array(KITTI_CALIB.splitlines()[5].split()[1:], dtype=float).reshape(3, 4)
    np.testing.assert_allclose(calib.T, R0 @ Tr, rtol=0, atol=1e-15)


def test_kitti_sample_round_trip(tmp_path):
    calib = parse_calibration(KITTI_CALIB)
    write_calibration(calib, tmp_path / "c.txt")
    again = read_calibration(tmp_path / "c.txt")
    np.testing.assert_allclose(again.T, calib.T, rtol=0, atol=1e-9)
    for v in (L, R):
        np.testing.assert_allclose(again.camera(v).P, calib.camera(v).P, rtol=0, atol=1e-9)


def test_random_calibrations_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(100):
        T = np.eye(4)
        T[:3, :3] = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        T[:3, 3] = rng.normal(size=3)
        P = np.hstack([np.diag([rng.uniform(300, 900)] * 2 + [1.0]), rng.normal(size=(3, 1))])
        P[:2, 2] = rng.uniform(100, 600, 2)
        P2 = P.copy()
        P2[0, 3] -= rng.uniform(100, 500)
        from lcfusion.geometry import CalibrationFrame, CameraModel

        calib = CalibrationFrame(T, {L: CameraModel(P), R: CameraModel(P2)})
        again = parse_calibration(format_calibration(calib))
        np.testing.assert_allclose(again.T, calib.T, rtol=0, atol=1e-9)
        np.testing.assert_allclose(again.camera(R).P, P2, rtol=0, atol=1e-9)


# -- point clouds ------------------------------------------------------------


def test_single_point_file(tmp_path):
    path = tmp_path / "one.bin"
    path.write_bytes(np.array([1, 2, 3, 0.5], dtype="<f4").tobytes())
    np.testing.assert_array_equal(read_point_cloud(path), [[1, 2, 3, 0.5]])


def test_empty_and_truncated(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    assert read_point_cloud(tmp_path / "e.bin").shape == (0, 4)
    (tmp_path / "t.bin").write_bytes(b"\0" * 20)
    with pytest.raises(KittiFormatError):
        read_point_cloud(tmp_path / "t.bin")


def test_cloud_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    for k in range(100):
        pts = (rng.normal(size=(1000, 4)) * 30).astype(np.float32)
        write_point_cloud(pts, tmp_path / f"{k}.bin")
        back = read_point_cloud(tmp_path / f"{k}.bin")
        assert back.tobytes() == pts.astype("<f4").tobytes()


# -- box conventions -----------------------------------------------------------


@given(
    st.floats(0.3, 6), st.floats(0.3, 6), st.floats(0.3, 6),
    st.floats(-30, 30), st.floats(-3, 3), st.floats(1, 80), st.floats(-math.pi, math.pi),
)
def test_convention_involution(h, w, l, x, y, z, ry):
    T = parse_calibration(KITTI_CALIB).T
    box = kitti_to_box((h, w, l), (x, y, z), ry, T)
    (h2, w2, l2), loc, ry2 = box_to_kitti(box, T)
    np.testing.assert_allclose([h2, w2, l2, *loc], [h, w, l, x, y, z], atol=1e-9)
    assert abs(math.remainder(ry2 - ry, 2 * math.pi)) < 1e-9


def test_convention_heading():
    # a car heading along the camera's +x axis has rotation_y 0 and LiDAR yaw -pi/2
    T = make_calibration().T
    box = kitti_to_box((1.5, 1.6, 3.9), (0.0, 1.0, 20.0), 0.0, T)
    assert box.yaw == pytest.approx(-0.5 * math.pi)
    front = box3d_corners(Box3D(box.x, box.y, box.z, box.l, box.h, box.w, box.yaw))[:2].mean(axis=0)
    cam_front = transform_points(front[None], T)[0]
    assert cam_front[0] > 0.0


# -- label / result / 2D rows ---------------------------------------------------


def test_empty_files(tmp_path):
    calib = make_calibration()
    (tmp_path / "e.txt").write_text("")
    assert read_detections(tmp_path / "e.txt", "result", "3d", calib) == []
    write_results([], calib, tmp_path / "r.txt")
    assert (tmp_path / "r.txt").read_text() == ""


def test_column_count_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("Car " + " ".join(["0"] * 13) + "\n")
    with pytest.raises(KittiFormatError):
        read_detections(path, "label", "3d", make_calibration())
    path.write_text("Car " + " ".join(["0"] * 14) + "\n")
    with pytest.raises(KittiFormatError):
        read_detections(path, "result", "3d", make_calibration())


def test_unknown_class_policy(tmp_path, caplog):
    calib = make_calibration()
    row = " 0 0 0 100 100 200 200 1.5 1.6 3.9 0 1.5 20 0 0.9\n"
    path = tmp_path / "u.txt"
    path.write_text("Truck" + row + "DontCare" + row + "Car" + row)
    with caplog.at_level(logging.WARNING):
        dets = read_detections(path, "result", "3d", calib, CLASSES)
    assert [d.label for d in dets] == ["Car"]
    assert "Truck" in caplog.text and "DontCare" not in caplog.text
    with pytest.raises(KittiFormatError, match="Truck"):
        read_detections(path, "result", "3d", calib, CLASSES, unknown="error")


def test_score_out_of_range(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("Car 0 0 0 100 100 200 200 1.5 1.6 3.9 0 1.5 20 0 1.5\n")
    with pytest.raises(KittiFormatError):
        read_detections(path, "result", "3d", make_calibration())
    path.write_text("Car -1 -1 -10 300 100 200 200 -1 -1 -1 -1000 -1000 -1000 -10 0.5\n")
    with pytest.raises(KittiFormatError):
        read_detections(path, "result", "2d")


def test_single_detection_row(tmp_path):
    calib = make_calibration()
    box = Box3D(20, 1, -0.9, 3.9, 1.56, 1.6, 0.4)
    text = format_results([Detection3D(box, 0.8, "Car")], calib)
    rows = text.splitlines()
    assert len(rows) == 1 and len(rows[0].split()) == 16
    fields = rows[0].split()
    assert fields[1] == "-1.0000" and fields[2] == "-1"
    px, _, valid = project_points(transform_points(box3d_corners(box), calib.T), calib.camera(L))
    aabb = enclosing_aabb(px, valid).clip(1242, 375)
    np.testing.assert_allclose([float(f) for f in fields[4:8]], aabb.as_tuple(), atol=1e-4)


def test_results_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    calib = parse_calibration(KITTI_CALIB)
    for k in range(100):
        dets = [Detection3D(random_box(rng), float(rng.random()), CLASSES[rng.integers(3)], i) for i in range(5)]
        write_results(dets, calib, tmp_path / f"{k}.txt")
        back = read_detections(tmp_path / f"{k}.txt", "result", "3d", calib, CLASSES)
        assert [d.label for d in back] == [d.label for d in dets]
        for a, b in zip(dets, back):
            assert_kitti_close(a.box, b.box, calib.T)
            assert abs(a.score - b.score) <= 1e-4 / 2 + 1e-12


def test_labels_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    calib = parse_calibration(KITTI_CALIB)
    for k in range(100):
        gts = []
        for _ in range(4):
            x0, y0 = rng.uniform(0, 1000), rng.uniform(0, 300)
            gts.append(
                GroundTruth(
                    random_box(rng), CLASSES[rng.integers(3)], float(rng.random()), int(rng.integers(4)),
                    float(rng.uniform(-3, 3)), Box2D(x0, y0, x0 + rng.uniform(1, 200), y0 + rng.uniform(1, 70)),
                )
            )
        write_labels(gts, calib, tmp_path / f"{k}.txt")
        back = read_detections(tmp_path / f"{k}.txt", "label", "3d", calib, CLASSES)
        for a, b in zip(gts, back):
            assert a.label == b.label and a.occlusion == b.occlusion
            assert abs(a.truncation - b.truncation) <= 1e-4
            assert abs(a.alpha - b.alpha) <= 1e-4
            np.testing.assert_allclose(a.bbox.as_tuple(), b.bbox.as_tuple(), atol=1e-4)
            assert_kitti_close(a.box, b.box, calib.T)


def test_2d_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    for k in range(100):
        dets = []
        for _ in range(6):
            x0, y0 = rng.uniform(0, 1100), rng.uniform(0, 300)
            box = Box2D(x0, y0, x0 + rng.uniform(0, 140), y0 + rng.uniform(0, 75))
            dets.append(Detection2D(box, float(rng.random()), CLASSES[rng.integers(3)], R))
        write_detections_2d(dets, tmp_path / f"{k}.txt")
        back = read_detections(tmp_path / f"{k}.txt", "result", "2d", view=R)
        for a, b in zip(dets, back):
            assert a.label == b.label and b.view == R
            np.testing.assert_allclose(a.box.as_tuple(), b.box.as_tuple(), atol=1e-4)
            assert abs(a.score - b.score) <= 1e-4
