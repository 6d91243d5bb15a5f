import numpy as np
import pytest

from evsync.camera import CameraModel
from evsync.geometry import RigidExtrinsics, rotation_about


def random_camera(rng, distortion=False) -> CameraModel:
    f = rng.uniform(200, 400)
    kw = {}
    if distortion:
        kw = dict(k1=rng.uniform(-0.2, 0.1), k2=rng.uniform(-0.05, 0.05), p1=rng.uniform(-1e-3, 1e-3), p2=rng.uniform(-1e-3, 1e-3))
    return CameraModel(fx=f, fy=f * rng.uniform(0.95, 1.05), cx=rng.uniform(150, 200), cy=rng.uniform(110, 150), **kw)


def random_pose(rng, max_angle=40.0) -> RigidExtrinsics:
    r = rotation_about(rng.normal(size=3), rng.uniform(1.0, max_angle))
    t = rng.normal(size=3)
    t[:2] *= 2.0
    return RigidExtrinsics(r, t)


def project(k: CameraModel, r, t, pts):
    """Pinhole projection oracle: K (R X + t), dehomogenized."""
    xc = pts @ np.asarray(r).T + np.asarray(t)
    uv = xc @ k.K.T
    return uv[:, :2] / uv[:, 2:3], xc[:, 2]


def random_scene(rng, n, k1=None, k2=None, ext=None):
    """Points in front of both cameras; camera 1 is the reference frame."""
    k1 = k1 or random_camera(rng)
    k2 = k2 or random_camera(rng)
    ext = ext or random_pose(rng)
    pts = []
    while len(pts) < n:
        x = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(4, 9)])
        if (ext.rotation @ x + ext.translation)[2] > 0.5:
            pts.append(x)
    pts = np.array(pts)
    p1, _ = project(k1, np.eye(3), np.zeros(3), pts)
    p2, _ = project(k2, ext.rotation, ext.translation, pts)
    return k1, k2, ext, pts, p1, p2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: (number, title, passed, detail), filled by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"#{num} {'PASS' if ok else 'FAIL'} {title}: {detail}")
