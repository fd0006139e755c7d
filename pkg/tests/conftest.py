from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lcfusion.geometry import LEFT, RIGHT, CalibrationFrame, CameraModel
from lcfusion.synthetic import SceneConfig, make_calibration

settings.register_profile("default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def intrinsics(f: float = 700.0, cx: float = 600.0, cy: float = 180.0) -> np.ndarray:
    return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])


def rectified_pair(baseline: float = 0.5, f: float = 700.0) -> tuple[np.ndarray, np.ndarray]:
    K = intrinsics(f)
    P_l = K @ np.hstack([np.eye(3), np.zeros((3, 1))])
    P_r = K @ np.hstack([np.eye(3), np.array([[-baseline], [0.0], [0.0]])])
    return P_l, P_r


def random_camera(rng: np.random.Generator, center: np.ndarray) -> np.ndarray:
    """Random pinhole camera at ``center`` looking roughly along +z."""
    angles = rng.normal(0.0, 0.15, 3)
    cx, cy, cz = np.cos(angles)
    sx, sy, sz = np.sin(angles)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    R = Rz @ Ry @ Rx
    K = intrinsics(rng.uniform(400, 1000), rng.uniform(300, 700), rng.uniform(150, 250))
    return K @ np.hstack([R, (-R @ center).reshape(3, 1)])


@pytest.fixture
def synth_calib() -> CalibrationFrame:
    return make_calibration(SceneConfig())


@pytest.fixture
def identity_calib() -> CalibrationFrame:
    """LiDAR frame equal to the camera frame, rectified pair with 0.5 m baseline."""
    P_l, P_r = rectified_pair()
    return CalibrationFrame(
        np.eye(4), {(0, LEFT): CameraModel(P_l, 1242, 375), (0, RIGHT): CameraModel(P_r, 1242, 375)}
    )


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
