import numpy as np
import pytest

from cupreg import Pose, ScannerGeometry
from cupreg.geometry import apply_pose, canonical_landmarks, project_perspective


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (one PASS/FAIL line each)")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, format_line
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(format_line(number))


@pytest.fixture
def geom():
    return ScannerGeometry(1040.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def projected_ring(pose, r=25.0, n=100, H=1040.0):
    """Detector-plane landmarks of a posed ring, built straight from the geometry module."""
    return project_perspective(apply_pose(canonical_landmarks(r, n), pose), ScannerGeometry(H))


def random_pose(rng, theta=(1.0, 50.0)):
    return Pose(
        rng.uniform(*theta),
        rng.uniform(-90.0, 90.0),
        rng.uniform(-100.0, 100.0),
        rng.uniform(-100.0, 100.0),
        rng.uniform(100.0, 520.0),
    )
