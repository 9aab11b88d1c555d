"""Rigid-body algebra, pinhole stereo camera, and Plücker lines.

Conventions
-----------
* A twist is a 6-vector ``[v, w]``: translation part first, rotation part
  second (meters, radians).
* ``Pose(R, t)`` maps points ``P -> R @ P + t``. Composition ``A @ B`` applies
  ``B`` first.
* Perturbations are applied on the left: ``T <- exp(delta) @ T``.
* Plücker lines are stored as ``(n, d)`` with ``n`` the moment (normal of the
  plane through the line and the origin) and ``d`` the direction.

Every scalar entry point has a batched twin (``*_batch`` or plural name)
operating on ``(N, 3)`` arrays and returning a validity mask instead of
raising, for use in the per-frame hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BehindCameraError,
    DegenerateDepthError,
    DegenerateLineError,
    GeometryError,
    NearSingularLogError,
)

Z_MIN = 1e-6
D_MIN = 0.5
LINE_EPS = 1e-12
LOG_PI_MARGIN = 1e-6


def skew(v):
    """Return the 3x3 cross-product matrix of ``v``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``P -> R @ P + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        if T.shape == (4, 4):
            return cls(T[:3, :3], T[:3, 3])
        if T.shape == (3, 4):
            return cls(T[:, :3], T[:, 3])
        raise GeometryError(f"expected a 3x4 or 4x4 matrix, got shape {T.shape}")

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self):
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return Pose(self.R @ other.R, self.R @ other.t + self.t)
        return NotImplemented

    def apply(self, P):
        """Transform a 3-vector or an ``(N, 3)`` array of points."""
        P = np.asarray(P, dtype=float)
        return P @ self.R.T + self.t

    def is_rigid(self, tol=1e-10):
        R = self.R
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.t))
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t))

    def __hash__(self):
        return hash((self.R.tobytes(), self.t.tobytes()))


# ---------------------------------------------------------------------------
# se(3) exponential / logarithm


def _so3_coeffs(theta):
    # A = sin/θ, B = (1-cos)/θ², C = (θ-sin)/θ³, with Taylor limits near zero
    if theta < 1e-4:
        t2 = theta * theta
        A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        C = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        A = s / theta
        B = (1.0 - c) / (theta * theta)
        C = (theta - s) / (theta**3)
    return A, B, C


def so3_exp(w):
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    A, B, _ = _so3_coeffs(theta)
    W = skew(w)
    return np.eye(3) + A * W + B * (W @ W)


def so3_log(R):
    """Rotation vector of ``R``; raises near ``pi``."""
    R = np.asarray(R, dtype=float)
    s_vec = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(s_vec))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if theta >= math.pi - LOG_PI_MARGIN:
        raise NearSingularLogError(f"rotation angle {theta:.9f} rad is too close to pi")
    if theta < 1e-4:
        t2 = theta * theta
        return s_vec * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    return s_vec * (theta / s)


def rotation_angle(R):
    """Geodesic angle of a rotation matrix in ``[0, pi]`` (radians)."""
    R = np.asarray(R, dtype=float)
    s = float(np.linalg.norm(0.5 * vee(R - R.T)))
    c = 0.5 * (np.trace(R) - 1.0)
    return math.atan2(s, c)


def se3_exp(xi):
    """Exponential map of a twist ``[v, w]`` to a :class:`Pose`."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    v, w = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    A, B, C = _so3_coeffs(theta)
    W = skew(w)
    W2 = W @ W
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    return Pose(R, V @ v)


def se3_log(T):
    """Logarithm of a :class:`Pose` as a twist ``[v, w]``.

    Raises :class:`NearSingularLogError` when the rotation angle is within
    ``1e-6`` of pi.
    """
    w = so3_log(T.R)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < 1e-4:
        t2 = theta * theta
        D = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        D = (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    V_inv = np.eye(3) - 0.5 * W + D * (W @ W)
    return np.concatenate([V_inv @ T.t, w])


def compose_left(xi, delta):
    """Twist of ``exp(delta) @ exp(xi)``."""
    return se3_log(se3_exp(delta) @ se3_exp(xi))


# ---------------------------------------------------------------------------
# Camera


@dataclass(frozen=True)
class CameraModel:
    """Rectified pinhole stereo pair; the right camera sits at ``+baseline`` on x."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "baseline", "width", "height"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise GeometryError(f"camera {name} must be positive, got {value}")
        for name in ("cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise GeometryError(f"camera {name} must be finite")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def line_matrix(self):
        """Matrix mapping a camera-frame moment ``n`` to image line coefficients."""
        fx, fy, cx, cy = self.fx, self.fy, self.cx, self.cy
        return np.array([[fy, 0.0, 0.0], [0.0, fx, 0.0], [-fy * cx, -fx * cy, fx * fy]])

    def in_bounds(self, uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


def project_point(P, cam, z_min=Z_MIN):
    """Pixel coordinates of a camera-frame point."""
    X, Y, Z = np.asarray(P, dtype=float)
    if not Z > z_min:
        raise BehindCameraError(f"point depth {Z} is not beyond z_min={z_min}")
    return np.array([cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy])


def project_points(P, cam, z_min=Z_MIN):
    """Batched projection. Returns ``(uv, valid)``; invalid rows hold NaN."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    Z = P[:, 2]
    valid = Z > z_min
    Zs = np.where(valid, Z, np.nan)
    uv = np.empty((len(P), 2))
    uv[:, 0] = cam.fx * P[:, 0] / Zs + cam.cx
    uv[:, 1] = cam.fy * P[:, 1] / Zs + cam.cy
    return uv, valid


def triangulate_stereo_point(uL, vL, uR, cam, d_min=D_MIN):
    disparity = uL - uR
    if not disparity > d_min:
        raise DegenerateDepthError(f"disparity {disparity} px is not above d_min={d_min}")
    Z = cam.fx * cam.baseline / disparity
    return np.array([(uL - cam.cx) * Z / cam.fx, (vL - cam.cy) * Z / cam.fy, Z])


def triangulate_stereo(uvL, uR, cam, d_min=D_MIN):
    """Batched rectified triangulation. Returns ``(P, valid)``."""
    uvL = np.asarray(uvL, dtype=float).reshape(-1, 2)
    uR = np.asarray(uR, dtype=float).reshape(-1)
    disparity = uvL[:, 0] - uR
    valid = disparity > d_min
    Z = cam.fx * cam.baseline / np.where(valid, disparity, np.nan)
    P = np.column_stack(
        [(uvL[:, 0] - cam.cx) * Z / cam.fx, (uvL[:, 1] - cam.cy) * Z / cam.fy, Z]
    )
    return P, valid


def project_right(P, cam, z_min=Z_MIN):
    """Projection into the right camera of the rectified pair."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    shifted = P - np.array([cam.baseline, 0.0, 0.0])
    return project_points(shifted, cam, z_min)


# ---------------------------------------------------------------------------
# Plücker lines


@dataclass(frozen=True, eq=False)
class PluckerLine:
    n: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n", np.array(self.n, dtype=float).reshape(3))
        object.__setattr__(self, "d", np.array(self.d, dtype=float).reshape(3))

    def as_vector(self):
        return np.concatenate([self.n, self.d])

    def normalized(self):
        s = float(np.linalg.norm(self.d))
        if s == 0.0:
            raise DegenerateLineError("line direction is zero")
        return PluckerLine(self.n / s, self.d / s)


@dataclass(frozen=True, eq=False)
class LineSegment3D:
    Xs: np.ndarray
    Xe: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Xs", np.array(self.Xs, dtype=float).reshape(3))
        object.__setattr__(self, "Xe", np.array(self.Xe, dtype=float).reshape(3))

    @property
    def midpoint(self):
        return (self.Xs + self.Xe) / 2.0

    def plucker(self):
        return plucker_from_endpoints(
            np.append(self.Xs, 1.0), np.append(self.Xe, 1.0), normalize=True
        )


def plucker_from_endpoints(Xs_h, Xe_h, normalize=False):
    """Plücker coordinates of the line through two homogeneous points.

    ``n = Xs x Xe`` on the inhomogeneous parts and ``d = w_e Xs - w_s Xe``.
    With ``normalize=True`` both are scaled so that ``|d| = 1``.
    """
    Xs_h = np.asarray(Xs_h, dtype=float).reshape(4)
    Xe_h = np.asarray(Xe_h, dtype=float).reshape(4)
    a, w1 = Xs_h[:3], Xs_h[3]
    b, w2 = Xe_h[:3], Xe_h[3]
    n = np.cross(a, b)
    d = w2 * a - w1 * b
    if not np.any(d):
        raise DegenerateLineError("endpoints coincide; line direction is zero")
    line = PluckerLine(n, d)
    return line.normalized() if normalize else line


def plucker_from_segments(Xs, Xe):
    """Batched normalized Plücker vectors ``(N, 6)`` from finite endpoints."""
    Xs = np.asarray(Xs, dtype=float).reshape(-1, 3)
    Xe = np.asarray(Xe, dtype=float).reshape(-1, 3)
    n = np.cross(Xs, Xe)
    d = Xs - Xe
    norm = np.linalg.norm(d, axis=1)
    valid = norm > 0
    scale = np.where(valid, norm, 1.0)[:, None]
    return np.hstack([n / scale, d / scale]), valid


def plucker_dual_matrix(L):
    """4x4 dual matrix ``[[d^, n], [-n^T, 0]]``."""
    M = np.zeros((4, 4))
    M[:3, :3] = skew(L.d)
    M[:3, 3] = L.n
    M[3, :3] = -L.n
    return M


def plucker_from_dual_matrix(M):
    M = np.asarray(M, dtype=float)
    return PluckerLine(M[:3, 3].copy(), vee(M[:3, :3]))


def transform_line(L, T):
    """Move a line by ``T``: ``n' = R n - t^ R d``, ``d' = R d``.

    The minus sign follows from ``d = Xs - Xe``: moving both endpoints gives
    ``(R Xs + t) x (R Xe + t) = R n - t x R d``.
    """
    Rd = T.R @ L.d
    return PluckerLine(T.R @ L.n - np.cross(T.t, Rd), Rd)


def transform_lines(L, T):
    """Batched :func:`transform_line` on ``(N, 6)`` Plücker vectors."""
    L = np.asarray(L, dtype=float).reshape(-1, 6)
    Rd = L[:, 3:] @ T.R.T
    n = L[:, :3] @ T.R.T - np.cross(T.t, Rd)
    return np.hstack([n, Rd])


def project_line(L_c, cam, eps=LINE_EPS):
    """Image line ``l = K_line @ n`` of a camera-frame line."""
    l = cam.line_matrix @ L_c.n
    if l[0] ** 2 + l[1] ** 2 < eps**2:
        raise DegenerateLineError("line passes through the optical center")
    return l


def project_lines(L_c, cam, eps=LINE_EPS):
    """Batched :func:`project_line`. Returns ``(l, valid)``."""
    L_c = np.asarray(L_c, dtype=float).reshape(-1, 6)
    l = L_c[:, :3] @ cam.line_matrix.T
    valid = l[:, 0] ** 2 + l[:, 1] ** 2 >= eps**2
    return l, valid
