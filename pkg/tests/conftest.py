import numpy as np
import pytest

from dualgraph.geometry import Pose, Rotation


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * rng.uniform(0, max_angle))


def random_pose(rng, scale=5.0, max_angle=np.pi):
    return Pose(random_rotation(rng, max_angle), rng.uniform(-scale, scale, 3))


def homogeneous(p: Pose):
    T = np.eye(4)
    T[:3, :3] = p.rotation.matrix
    T[:3, 3] = p.translation
    return T


def spd(rng, dim, lo=1.0, hi=50.0):
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return Q @ np.diag(rng.uniform(lo, hi, dim)) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance check, printed after the run
ACCEPTANCE = {}


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:<4} {detail}")
