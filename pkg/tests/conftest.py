import numpy as np
import pytest

from volsample import Aabb, CompositeScene, ConstantBox, GaussianBlob, RayBundle
from volsample.cli.camera import PinholeCamera

UNIT = Aabb.cube(1.0)


def blob_scene():
    return CompositeScene([GaussianBlob(sigma=20.0, mean=(0.0, 0.0, 0.0), width=0.2, color=(0.8, 0.5, 0.2))],
                          bounds=UNIT)


def sparse_scene():
    """Three boxes filling 2.4% of [-1, 1]^3; faces lie on planes of a 64^3 grid."""
    return CompositeScene([
        ConstantBox(6.0, Aabb((-0.625, -0.25, -0.25), (-0.125, 0.25, 0.25)), (0.9, 0.2, 0.2)),
        ConstantBox(2.0, Aabb((0.25, -0.5, -0.125), (0.5, -0.125, 0.375)), (0.2, 0.8, 0.3)),
        ConstantBox(4.0, Aabb((0.125, 0.375, -0.25), (0.5, 0.625, 0.0)), (0.2, 0.3, 0.9)),
    ], bounds=UNIT)


def blob_rays(size=64):
    return PinholeCamera(position=(0.0, 0.0, 3.0), fov_deg=45, width=size, height=size).rays(1.0, 5.0)


def sparse_rays(size=64):
    return PinholeCamera(position=(1.2, 0.9, 2.6), fov_deg=45, width=size, height=size).rays(1.0, 5.5)


def random_rays(rng, n, box=UNIT, spread=3.0):
    """Rays from a shell around `box` aimed at random points inside it."""
    origins = rng.normal(size=(n, 3))
    origins *= spread / np.linalg.norm(origins, axis=1, keepdims=True)
    targets = rng.uniform(box.min, box.max, size=(n, 3))
    d = targets - origins
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return RayBundle(origins, d, 0.5, 2 * spread)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, one-line summary); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, line = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {line}")
