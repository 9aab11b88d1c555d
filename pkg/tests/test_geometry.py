import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from plvo.exceptions import (
    BehindCameraError,
    DegenerateDepthError,
    DegenerateLineError,
    GeometryError,
    NearSingularLogError,
)
from plvo.geometry import (
    CameraModel,
    LineSegment3D,
    PluckerLine,
    Pose,
    compose_left,
    plucker_dual_matrix,
    plucker_from_dual_matrix,
    plucker_from_endpoints,
    plucker_from_segments,
    project_line,
    project_lines,
    project_point,
    project_points,
    project_right,
    rotation_angle,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
    transform_line,
    transform_lines,
    triangulate_stereo,
    triangulate_stereo_point,
)

small_cam = CameraModel(100.0, 100.0, 50.0, 50.0, 0.5, 640, 480)


# --- se(3) ---------------------------------------------------------------


def test_exp_zero_is_identity():
    T = se3_exp(np.zeros(6))
    assert np.array_equal(T.R, np.eye(3)) and np.array_equal(T.t, np.zeros(3))


def test_exp_pure_translation():
    T = se3_exp([1, 0, 0, 0, 0, 0])
    assert np.allclose(T.R, np.eye(3), atol=0) and np.allclose(T.t, [1, 0, 0], atol=0)


def test_exp_quarter_turn_about_z():
    T = se3_exp([0, 0, 0, 0, 0, math.pi / 2])
    assert np.allclose(T.R @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    assert np.allclose(T.t, 0, atol=1e-15)


def test_log_identity_and_translation():
    assert np.array_equal(se3_log(Pose.identity()), np.zeros(6))
    assert np.allclose(se3_log(Pose(np.eye(3), [0, 2, 0])), [0, 2, 0, 0, 0, 0], atol=0)


def test_log_roundtrip_angle_03(rng):
    for _ in range(20):
        T = random_pose(rng, angle=0.3)
        T2 = se3_exp(se3_log(T))
        assert np.abs(T2.matrix() - T.matrix()).max() < 1e-10


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.floats(1e-9, math.pi - 1e-3),
)
def test_exp_log_roundtrip_property(v, wdir, angle):
    w = np.array(wdir)
    if np.linalg.norm(w) < 1e-3:
        w = np.array([0.0, 0.0, 1.0])
    w = w / np.linalg.norm(w) * angle
    xi = np.concatenate([v, w])
    assert np.abs(se3_log(se3_exp(xi)) - xi).max() < 1e-10 * max(1.0, np.abs(xi).max()) * 10


def test_log_near_pi_raises():
    T = se3_exp([0, 0, 0, 0, 0, math.pi - 1e-8])
    with pytest.raises(NearSingularLogError):
        se3_log(T)
    with pytest.raises(NearSingularLogError):
        so3_log(T.R)


def test_small_angle_taylor_branch():
    w = np.array([1e-9, -2e-9, 3e-9])
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-20, rtol=1e-6)


def test_exp_is_rigid(rng):
    for _ in range(50):
        T = random_pose(rng, angle=rng.uniform(0, 3))
        assert T.is_rigid(1e-10)


def test_compose_left_matches_matrix_product(rng):
    xi = se3_log(random_pose(rng))
    d = rng.normal(scale=0.1, size=6)
    lhs = se3_exp(compose_left(xi, d))
    rhs = se3_exp(d) @ se3_exp(xi)
    assert np.abs(lhs.matrix() - rhs.matrix()).max() < 1e-12


def test_rotation_angle(rng):
    assert rotation_angle(np.eye(3)) == 0.0
    assert math.isclose(rotation_angle(so3_exp([0, 0.7, 0])), 0.7, rel_tol=1e-12)


def test_pose_inverse_and_eq(rng):
    T = random_pose(rng)
    I = T @ T.inverse()
    assert np.abs(I.matrix() - np.eye(4)).max() < 1e-14
    assert T == Pose(T.R.copy(), T.t.copy())
    assert hash(T) == hash(Pose(T.R.copy(), T.t.copy()))
    with pytest.raises(ValueError):
        T.R[0, 0] = 2.0


def test_pose_from_matrix_shapes():
    M = np.eye(4)
    M[:3, 3] = [1, 2, 3]
    assert Pose.from_matrix(M) == Pose.from_matrix(M[:3])
    with pytest.raises(GeometryError):
        Pose.from_matrix(np.eye(3))


# --- camera ----------------------------------------------------------------


@pytest.mark.parametrize("field", ["fx", "fy", "baseline", "width", "height"])
def test_camera_rejects_nonpositive(field):
    kw = dict(fx=1.0, fy=1.0, cx=0.0, cy=0.0, baseline=1.0, width=10, height=10)
    kw[field] = 0
    with pytest.raises(GeometryError):
        CameraModel(**kw)


def test_line_matrix_is_adjugate_of_K():
    cam = CameraModel(2.0, 3.0, 4.0, 5.0, 1.0, 10, 10)
    expected = np.array([[3, 0, 0], [0, 2, 0], [-12, -10, 6]], dtype=float)
    assert np.array_equal(cam.line_matrix, expected)
    assert np.allclose(cam.line_matrix, np.linalg.det(cam.K) * np.linalg.inv(cam.K).T)


def test_project_point_examples():
    assert np.array_equal(project_point([0, 0, 2], small_cam), [50, 50])
    assert np.array_equal(project_point([1, 0, 2], small_cam), [100, 50])
    kitti = CameraModel(718.856, 718.856, 607.1928, 185.2157, 0.54, 1241, 376)
    uv = project_point([0.3, -0.4, 1.5], kitti)
    expect = (718.856 * (0.3 / 1.5) + 607.1928, 718.856 * (-0.4 / 1.5) + 185.2157)
    assert np.allclose(uv, expect, rtol=0, atol=1e-12)


def test_project_point_behind_camera():
    with pytest.raises(BehindCameraError):
        project_point([0, 0, 1e-7], small_cam)
    with pytest.raises(BehindCameraError):
        project_point([0, 0, -1], small_cam)
    _, ok = project_points(np.array([[0, 0, 1.0], [0, 0, -1.0]]), small_cam)
    assert ok.tolist() == [True, False]


def test_triangulate_example():
    P = triangulate_stereo_point(150, 50, 100, small_cam)
    assert np.allclose(P, [1.0, 0.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("uR", [150.0, 149.6, 160.0])
def test_triangulate_zero_or_tiny_disparity(uR):
    with pytest.raises(DegenerateDepthError):
        triangulate_stereo_point(150, 50, uR, small_cam)


def test_triangulate_projection_roundtrip(cam, rng):
    P = np.column_stack([rng.uniform(-3, 3, 500), rng.uniform(-2, 2, 500), rng.uniform(1, 40, 500)])
    uvL, _ = project_points(P, cam)
    uvR, _ = project_right(P, cam)
    P2, ok = triangulate_stereo(uvL, uvR[:, 0], cam)
    assert ok.all()
    assert np.abs(P2 - P).max() < 1e-9 * 40
    uv2, _ = project_points(P2, cam)
    uvR2, _ = project_right(P2, cam)
    assert np.abs(uv2 - uvL).max() < 1e-9 and np.abs(uvR2 - uvR).max() < 1e-9


# --- Plücker ---------------------------------------------------------------


def test_plucker_examples():
    L = plucker_from_endpoints([1, 0, 0, 1], [0, 1, 0, 1])
    assert np.array_equal(L.n, [0, 0, 1]) and np.array_equal(L.d, [1, -1, 0])
    L = plucker_from_endpoints([0, 0, 1, 1], [0, 0, 2, 1])
    assert np.array_equal(L.n, [0, 0, 0]) and np.array_equal(L.d, [0, 0, -1])
    L = plucker_from_endpoints([1, 1, 1, 1], [2, 1, 1, 1])
    # d = Xs - Xe, so the direction points from Xe back to Xs
    assert np.array_equal(L.n, [0, 1, -1]) and np.array_equal(L.d, [-1, 0, 0])


def test_plucker_coincident_endpoints():
    with pytest.raises(DegenerateLineError):
        plucker_from_endpoints([1, 2, 3, 1], [1, 2, 3, 1])
    _, ok = plucker_from_segments(np.ones((2, 3)), np.array([[1, 1, 1.0], [0, 0, 0]]))
    assert ok.tolist() == [False, True]


def test_plucker_normalized_unit_direction(rng):
    seg = LineSegment3D(rng.normal(size=3), rng.normal(size=3))
    L = seg.plucker()
    assert math.isclose(np.linalg.norm(L.d), 1.0, rel_tol=1e-15)
    assert np.array_equal(seg.midpoint, (seg.Xs + seg.Xe) / 2.0)


def test_dual_matrix_layout():
    L = PluckerLine([0, 0, 1], [1, -1, 0])
    M = plucker_dual_matrix(L)
    assert np.array_equal(M[:3, :3], [[0, 0, -1], [0, 0, -1], [1, 1, 0]])
    assert np.array_equal(M[:3, 3], [0, 0, 1]) and np.array_equal(M[3], [0, 0, -1, 0])
    Z = plucker_dual_matrix(PluckerLine([0, 0, 0], [0, 0, 1]))
    assert not Z[:3, 3].any() and not Z[3].any()


def test_dual_matrix_roundtrip(rng):
    for _ in range(20):
        L = PluckerLine(rng.normal(size=3), rng.normal(size=3))
        L2 = plucker_from_dual_matrix(plucker_dual_matrix(L))
        assert np.array_equal(L2.n, L.n) and np.array_equal(L2.d, L.d)


def test_transform_identity(rng):
    L = PluckerLine(rng.normal(size=3), rng.normal(size=3))
    L2 = transform_line(L, Pose.identity())
    assert np.array_equal(L2.n, L.n) and np.array_equal(L2.d, L.d)


def test_transform_pure_translation_example():
    Xs, Xe = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    T = Pose(np.eye(3), [0, 0, 1])
    L = transform_line(plucker_from_endpoints(np.append(Xs, 1), np.append(Xe, 1)), T)
    ref = plucker_from_endpoints(np.append(T.apply(Xs), 1), np.append(T.apply(Xe), 1))
    assert np.abs(L.as_vector() - ref.as_vector()).max() < 1e-12
    assert np.allclose(L.n, [-1, -1, 1])


def test_transform_batched_matches_scalar(rng):
    T = random_pose(rng)
    Ls = rng.normal(size=(10, 6))
    out = transform_lines(Ls, T)
    for k in range(10):
        ref = transform_line(PluckerLine(Ls[k, :3], Ls[k, 3:]), T).as_vector()
        assert np.abs(out[k] - ref).max() < 1e-14


def test_project_line_examples():
    unit = CameraModel(1.0, 1.0, 0.0, 0.0, 1.0, 10, 10)
    assert np.array_equal(project_line(PluckerLine([1, 0, 0], [0, 1, 0]), unit), [1, 0, 0])
    cam = CameraModel(2.0, 3.0, 4.0, 5.0, 1.0, 10, 10)
    assert np.array_equal(project_line(PluckerLine([1, 1, 1], [1, -1, 0]), cam), [3, 2, -16])


def test_project_line_through_optical_center(cam):
    L = plucker_from_endpoints([0, 0, 1, 1], [0, 0, 5, 1])
    with pytest.raises(DegenerateLineError):
        project_line(L, cam)
    _, ok = project_lines(L.as_vector()[None], cam)
    assert not ok[0]


def test_projected_endpoints_lie_on_projected_line(cam, rng):
    Xs = np.column_stack([rng.uniform(-3, 3, 200), rng.uniform(-2, 2, 200), rng.uniform(2, 20, 200)])
    Xe = Xs + rng.normal(size=(200, 3))
    Xe[:, 2] = np.abs(Xe[:, 2]) + 1
    L, _ = plucker_from_segments(Xs, Xe)
    l, ok = project_lines(L, cam)
    assert ok.all()
    for P in (Xs, Xe):
        uv, _ = project_points(P, cam)
        dist = (uv[:, 0] * l[:, 0] + uv[:, 1] * l[:, 1] + l[:, 2]) / np.hypot(l[:, 0], l[:, 1])
        assert np.abs(dist).max() < 1e-9
