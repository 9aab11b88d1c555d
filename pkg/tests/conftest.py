import numpy as np
import pytest

from plvo.geometry import CameraModel, se3_exp


@pytest.fixture
def cam():
    return CameraModel(400.0, 400.0, 320.0, 240.0, 0.5, 640, 480)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, angle=0.3, trans=1.0):
    w = rng.normal(size=3)
    w *= angle / np.linalg.norm(w)
    return se3_exp(np.concatenate([rng.uniform(-trans, trans, 3), w]))


def central_diff(f, x, h=1e-6):
    """Central finite-difference Jacobian of ``f`` at ``x`` (columns = x)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros(f0.shape + (len(x),))
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        J[..., k] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


def left_perturbed(T):
    """``delta -> exp(delta) @ T`` for finite differences in the left-perturbation convention."""
    return lambda delta: se3_exp(delta) @ T


def assert_jac_close(J, J_fd, rtol=1e-4, atol=1e-8):
    err = np.abs(J - J_fd)
    scale = np.maximum(np.abs(J_fd), 1.0) if atol is None else np.abs(J_fd)
    assert np.all(err <= rtol * scale + atol), f"max err {err.max():.3e}"


# acceptance criteria register one line each; printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
