import numpy as np
import pytest

from echoseg.gs_scene import CameraPose, GaussianCloud


def make_pose(position=(0.0, 0.0, 0.0), rotation=None, f=500.0, c=504.0, size=1008):
    R = np.eye(3) if rotation is None else rotation
    return CameraPose(f, f, c, c, size, size, R, position)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_cloud(rng, n, spread=1.0, offset=(0.0, 0.0, 3.0)):
    q = rng.normal(size=(n, 4))
    return GaussianCloud(
        centers=rng.normal(scale=spread, size=(n, 3)) + np.asarray(offset),
        scales=np.exp(rng.uniform(-4, -1, size=(n, 3))),
        rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
        opacities=rng.uniform(0.05, 0.99, size=n),
        colors_dc=rng.normal(size=(n, 3)),
    )


def points_cloud(centers, scale=0.01, opacity=0.9):
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    n = len(centers)
    return GaussianCloud(centers, np.full((n, 3), scale), np.tile([1.0, 0, 0, 0], (n, 1)),
                         np.full(n, opacity))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pose():
    return make_pose()


# one PASS/FAIL line per acceptance criterion, printed after the run

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported at the end")
    config.stash[_CRITERIA] = {}


def pytest_runtest_logreport(report):
    if "criterion" not in report.keywords:
        return
    name = dict(report.user_properties).get("criterion", report.nodeid)
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.failed):
        results = _config.stash[_CRITERIA]
        results[name] = ("PASS" if report.passed else "FAIL", detail)


_config = None


@pytest.hookimpl(tryfirst=True)
def pytest_sessionstart(session):
    global _config
    _config = session.config


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in results.items():
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
