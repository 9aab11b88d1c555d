import numpy as np
import pytest

from plvo.frame_grid import (
    GridIndex,
    LineSet,
    MatchConfig,
    PointSet,
    RawFrame,
    build_grid_index,
    build_stereo_frame,
    cap_per_cell,
    descriptor_distance,
    mutual_best,
    search_width_cells,
    stereo_match_lines,
    stereo_match_points,
    track_temporal,
)
from plvo.geometry import Pose, project_points, project_right, se3_exp
from plvo.harness.synthetic import SyntheticSceneConfig, generate_synthetic

GRID = GridIndex(640, 480)
CFG = MatchConfig()


def pts(uv, tags=None, response=None):
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    tags = None if tags is None else np.asarray(tags, dtype=np.int64)
    return PointSet(uv, np.arange(len(uv)), tags, response)


# --- grid ------------------------------------------------------------------


def test_cell_arithmetic():
    assert GRID.cell(5, 5) == (0, 0)
    assert GRID.cell(639.9, 479.9) == (63, 47)
    assert GRID.cell(10, 10) == (1, 1)


def test_cap_keeps_highest_responses():
    uv = np.full((10, 2), 5.0)
    b = build_grid_index(pts(uv, response=np.arange(1, 11)), 640, 480)
    assert sorted(np.flatnonzero(b.point_keep).tolist()) == list(range(2, 10))
    assert b.point_cells == {(0, 0): list(range(2, 10))}


def test_cap_ties_go_to_smaller_index():
    keep = cap_per_cell(np.zeros(4, int), np.zeros(4, int), np.ones(4), 2)
    assert keep.tolist() == [True, True, False, False]


def test_out_of_bounds_points_rejected_and_counted():
    b = build_grid_index(pts([[-1, 5], [5, 5], [640, 5], [5, 480]]), 640, 480)
    assert b.point_keep.tolist() == [False, True, False, False]
    assert b.n_rejected == 3


def test_horizontal_segment_rasterization():
    lines = LineSet(np.array([[0, 240, 639, 240.0]]))
    b = build_grid_index(pts(np.zeros((0, 2))), 640, 480, lines=lines)
    assert sorted(b.line_cells) == [(a, 24) for a in range(64)]


def test_segment_cells_are_conservative(rng):
    # every cell containing a densely sampled point of the segment is registered
    for _ in range(50):
        seg = np.concatenate([rng.uniform(0, 640, 1), rng.uniform(0, 480, 1), rng.uniform(0, 640, 1), rng.uniform(0, 480, 1)])
        cells = set(GRID.segment_cells(seg))
        t = np.linspace(0, 1, 4000)[:, None]
        samples = seg[:2] * (1 - t) + seg[2:] * t
        a, b = GRID.cells(samples)
        assert set(zip(a.tolist(), b.tolist())) <= cells


# --- descriptors and mutual best ---------------------------------------------


def test_descriptor_distances():
    tags = np.array([1, 2, 3])
    d = descriptor_distance(tags, np.array([0, 1]), tags, np.array([0, 2]))
    assert d[0] == 0 and np.isinf(d[1])
    A = np.zeros((1, 32), np.uint8)
    B = np.zeros((1, 32), np.uint8)
    B[0, 0], B[0, 31] = 0b1011, 0xFF
    assert descriptor_distance(A, [0], B, [0])[0] == 11
    assert descriptor_distance(None, [0, 1], A, [0, 0]).tolist() == [0, 0]


def test_mutual_best_is_injective(rng):
    for _ in range(30):
        n = 40
        i = rng.integers(0, 10, n)
        j = rng.integers(0, 10, n)
        mi, mj = mutual_best(i, j, rng.integers(0, 3, n).astype(float), rng.random(n))
        assert len(set(mi.tolist())) == len(mi) and len(set(mj.tolist())) == len(mj)


# --- stereo matching ---------------------------------------------------------


def test_stereo_match_simple():
    mi, mj, _ = stereo_match_points(pts([[200, 100]]), pts([[180, 100]]), GRID, CFG)
    assert mi.tolist() == [0] and mj.tolist() == [0]


@pytest.mark.parametrize("right", [[180, 120], [220, 100]])
def test_stereo_match_rejections(right):
    mi, _, _ = stereo_match_points(pts([[200, 100]]), pts([right]), GRID, CFG)
    assert len(mi) == 0


def test_stereo_search_width():
    assert search_width_cells(640, CFG) == 20
    # disparity beyond c cells is out of range
    mi, _, _ = stereo_match_points(pts([[400, 100]]), pts([[150, 100]]), GRID, CFG)
    assert len(mi) == 0


def test_stereo_zero_disparity_counted():
    mi, _, n_zero = stereo_match_points(pts([[200, 100]], [7]), pts([[200, 100]], [7]), GRID, CFG)
    assert len(mi) == 0 and n_zero == 1


def test_stereo_descriptor_and_tie_breaking():
    left = pts([[200, 100]], [5])
    right = pts([[190, 100], [180, 100]], [9, 5])
    mi, mj, _ = stereo_match_points(left, right, GRID, CFG)
    assert mj.tolist() == [1]
    right = pts([[180, 100], [190, 100]])  # no descriptors: nearer wins
    _, mj, _ = stereo_match_points(pts([[200, 100]]), right, GRID, CFG)
    assert mj.tolist() == [1]


def test_stereo_invariants_random(rng):
    left = pts(np.column_stack([rng.uniform(0, 640, 300), rng.uniform(0, 480, 300)]))
    right = pts(np.column_stack([rng.uniform(0, 640, 300), rng.uniform(0, 480, 300)]))
    log = []
    mi, mj, _ = stereo_match_points(left, right, GRID, CFG, visit_log=log)
    assert len(mi) > 0
    uvL, uvR = left.uv[mi], right.uv[mj]
    assert np.all(np.abs(uvL[:, 1] - uvR[:, 1]) <= CFG.epipolar_tol)
    assert np.all(uvL[:, 0] - uvR[:, 0] > CFG.d_min)
    assert len(set(mi.tolist())) == len(mi) and len(set(mj.tolist())) == len(mj)
    aL, bL = GRID.cells(left.uv)
    for i, (a, b) in log:
        assert b == bL[i] and aL[i] - 20 <= a <= aL[i]


def test_stereo_lines_rendered_pair(cam, rng):
    Xs = np.array([[0.5, -0.5, 4.0], [-1.0, 0.3, 6.0]])
    Xe = Xs + np.array([[0.2, 1.0, 0.0], [0.0, 0.8, 0.5]])
    # choose depth so disparity is 40 px (fx*b/Z = 40 at Z = 5)
    Xs[0, 2] = Xe[0, 2] = 5.0
    uvLs, _ = project_points(Xs, cam)
    uvLe, _ = project_points(Xe, cam)
    uvRs, _ = project_right(Xs, cam)
    uvRe, _ = project_right(Xe, cam)
    left = LineSet(np.hstack([uvLs, uvLe]))
    right = LineSet(np.hstack([uvRe, uvRs])[::-1])  # reversed order and swapped endpoints
    raw = RawFrame(0, left_lines=left, right_lines=right)
    sf = build_stereo_frame(raw, cam)
    assert sf.n_lines == 2
    assert np.abs(uvLs[0, 0] - uvRs[0, 0] - 40) < 1e-9
    assert np.abs(sf.ln_Xs - Xs).max() < 1e-6 and np.abs(sf.ln_Xe - Xe).max() < 1e-6


def test_stereo_line_one_endpoint_violates_epipolar():
    left = LineSet(np.array([[200, 100, 210, 150.0]]))
    right = LineSet(np.array([[180, 100, 190, 160.0]]))
    mi, _, _ = stereo_match_lines(left, right, GRID, CFG)
    assert len(mi) == 0


def test_stereo_lines_mutual_best_single_match():
    left = LineSet(np.array([[200, 100, 200, 150.0]]))
    right = LineSet(np.array([[180, 100, 180, 150.0], [170, 100, 170, 150.0]]))
    mi, mj, _ = stereo_match_lines(left, right, GRID, CFG)
    assert mi.tolist() == [0] and mj.tolist() == [0]


def test_stereo_frame_landmark_counts(cam):
    seq = generate_synthetic(SyntheticSceneConfig(n_frames=1, n_static_points=80, n_static_lines=20, seed=4))
    sf = build_stereo_frame(seq.frames[0], cam)
    assert sf.n_points == len(sf.pt_xyz) == len(sf.pt_uvR)
    assert sf.n_lines == len(sf.ln_Xs) == len(sf.ln_plucker)
    assert np.abs(sf.pt_xyz - seq.points_world[sf.pt_ids]).max() < 1e-9


# --- temporal tracking ---------------------------------------------------------


def synthetic_pair(step, n_pts=120, n_lines=30, seed=2):
    cfg = SyntheticSceneConfig(n_frames=2, step=step, n_static_points=n_pts, n_static_lines=n_lines, seed=seed)
    seq = generate_synthetic(cfg)
    from plvo.frame_grid import build_stereo_frame as b

    return seq, b(seq.frames[0], seq.camera), b(seq.frames[1], seq.camera)


def test_track_identity_identical_frames(cam):
    seq, f0, _ = synthetic_pair((0, 0, 0, 0, 0, 0))
    c = track_temporal(f0, f0, Pose.identity(), cam)
    assert np.array_equal(c.pt_prev_idx, c.pt_curr_idx) and c.n_points == f0.n_points
    assert np.array_equal(c.ln_prev_idx, c.ln_curr_idx) and c.n_lines == f0.n_lines


def test_track_forward_motion_exact_prediction(cam):
    seq, f0, f1 = synthetic_pair((0, 0, 0.5, 0, 0, 0))
    T = seq.gt.poses[1].inverse() @ seq.gt.poses[0]
    log = []
    c = track_temporal(f0, f1, T, cam, visit_log=log)
    common = np.intersect1d(f0.pt_ids, f1.pt_ids)
    assert np.array_equal(np.sort(c.pt_ids), common)
    assert np.array_equal(np.sort(c.ln_ids), np.intersect1d(f0.ln_ids, f1.ln_ids))
    uv, _ = project_points(T.apply(c.pt_xyz), cam)
    assert np.abs(uv - c.pt_obs).max() < 1e-6
    for _, (pa, pb), (oa, ob) in log:
        assert abs(pa - oa) <= 1 and abs(pb - ob) <= 1


def test_track_rejects_beyond_search_radius(cam):
    seq, f0, _ = synthetic_pair((0, 0, 0, 0, 0, 0), n_pts=5, n_lines=0)
    # 100 px lateral shift: fx * dx / Z = 100
    shifted = RawFrame(
        1,
        PointSet(seq.frames[0].left_points.uv + [100, 0], seq.frames[0].left_points.ids, seq.frames[0].left_points.desc),
        PointSet(seq.frames[0].right_points.uv + [100, 0], seq.frames[0].right_points.ids, seq.frames[0].right_points.desc),
    )
    f1 = build_stereo_frame(shifted, cam)
    assert f1.n_points > 0
    assert track_temporal(f0, f1, Pose.identity(), cam).n_points == 0


def test_match_determinism(cam):
    _, f0, f1 = synthetic_pair((0.05, 0, 0.4, 0, 0.01, 0), seed=9)
    T = se3_exp([0, 0, -0.4, 0, 0, 0])
    a = track_temporal(f0, f1, T, cam, search_radius=80, cell_radius=8)
    b = track_temporal(f0, f1, T, cam, search_radius=80, cell_radius=8)
    assert np.array_equal(a.pt_prev_idx, b.pt_prev_idx) and np.array_equal(a.ln_curr_idx, b.ln_curr_idx)
