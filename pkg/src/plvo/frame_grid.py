"""Grid-indexed feature storage, stereo matching and frame-to-frame tracking.

Features live in structure-of-arrays containers (:class:`PointSet`,
:class:`LineSet`) so that the candidate rules can be evaluated with numpy
broadcasting. The rules themselves are cell rules: a candidate is only ever
considered if it lies in one of the cells the rule allows.

Descriptors come in three flavours:

* ``None``: no appearance information, every pair is equally similar;
* a 1-D integer array of identity tags (synthetic data): equal tags have
  distance 0, different tags are incompatible;
* a 2-D ``uint8`` array of packed binary descriptors: Hamming distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    plucker_from_segments,
    project_points,
    triangulate_stereo,
)

GRID_COLS = 64
GRID_ROWS = 48

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


# ---------------------------------------------------------------------------
# containers


def _take(desc, idx):
    return None if desc is None else desc[idx]


@dataclass
class PointSet:
    """Point detections in one image."""

    uv: np.ndarray
    ids: np.ndarray = None
    desc: np.ndarray = None
    response: np.ndarray = None

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        n = len(self.uv)
        self.ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        self.response = (
            np.ones(n) if self.response is None else np.asarray(self.response, dtype=float)
        )

    def __len__(self):
        return len(self.uv)

    def subset(self, idx):
        return PointSet(self.uv[idx], self.ids[idx], _take(self.desc, idx), self.response[idx])

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), None, np.zeros(0))


@dataclass
class LineSet:
    """Line-segment detections ``(us, vs, ue, ve)`` in one image."""

    seg: np.ndarray
    ids: np.ndarray = None
    desc: np.ndarray = None
    response: np.ndarray = None

    def __post_init__(self):
        self.seg = np.asarray(self.seg, dtype=float).reshape(-1, 4)
        n = len(self.seg)
        self.ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        self.response = (
            np.ones(n) if self.response is None else np.asarray(self.response, dtype=float)
        )

    def __len__(self):
        return len(self.seg)

    @property
    def midpoints(self):
        return 0.5 * (self.seg[:, :2] + self.seg[:, 2:])

    def subset(self, idx):
        return LineSet(self.seg[idx], self.ids[idx], _take(self.desc, idx), self.response[idx])

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), None, np.zeros(0))


@dataclass
class RawFrame:
    """Unmatched observations of one stereo frame."""

    frame_id: int
    left_points: PointSet = field(default_factory=PointSet.empty)
    right_points: PointSet = field(default_factory=PointSet.empty)
    left_lines: LineSet = field(default_factory=LineSet.empty)
    right_lines: LineSet = field(default_factory=LineSet.empty)
    timestamp: float = None


@dataclass
class MatchConfig:
    epipolar_tol: float = 2.0
    d_min: float = 0.5
    max_disparity_frac: float = 0.3
    cols: int = GRID_COLS
    rows: int = GRID_ROWS
    n_max: int = 8
    search_radius: float = 25.0
    cell_radius: int = 1


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridIndex:
    width: float
    height: float
    cols: int = GRID_COLS
    rows: int = GRID_ROWS

    def cells(self, uv):
        """Cell ``(a, b)`` of pixel coordinates; may fall outside the grid."""
        uv = np.asarray(uv, dtype=float)
        a = np.floor(uv[..., 0] * self.cols / self.width).astype(np.int64)
        b = np.floor(uv[..., 1] * self.rows / self.height).astype(np.int64)
        return a, b

    def cell(self, u, v):
        a, b = self.cells(np.array([u, v]))
        return int(a), int(b)

    def in_bounds(self, uv):
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0)
            & (uv[..., 0] < self.width)
            & (uv[..., 1] >= 0)
            & (uv[..., 1] < self.height)
        )

    def segment_cells(self, seg):
        """All cells a segment intersects (half-open cells, conservative)."""
        us, vs, ue, ve = (float(x) for x in seg)
        x0, y0 = us * self.cols / self.width, vs * self.rows / self.height
        x1, y1 = ue * self.cols / self.width, ve * self.rows / self.height
        out = []
        a_lo, a_hi = math.floor(min(x0, x1)), math.floor(max(x0, x1))
        for a in range(a_lo, a_hi + 1):
            if x0 == x1:
                ya, yb = y0, y1
            else:
                lo, hi = max(a, min(x0, x1)), min(a + 1, max(x0, x1))
                ya = y0 + (y1 - y0) * (lo - x0) / (x1 - x0)
                yb = y0 + (y1 - y0) * (hi - x0) / (x1 - x0)
            b_lo, b_hi = math.floor(min(ya, yb)), math.floor(max(ya, yb))
            for b in range(b_lo, b_hi + 1):
                if 0 <= a < self.cols and 0 <= b < self.rows:
                    out.append((a, b))
        return out


@dataclass
class GridBuckets:
    grid: GridIndex
    point_keep: np.ndarray
    point_cells: dict
    line_cells: dict
    n_rejected: int


def cap_per_cell(a, b, response, n_max):
    """Mask keeping the ``n_max`` highest-response entries of every cell.

    Ties go to the smaller index.
    """
    n = len(a)
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    order = np.lexsort((np.arange(n), -np.asarray(response, dtype=float), b, a))
    sa, sb = a[order], b[order]
    new_cell = np.ones(n, dtype=bool)
    new_cell[1:] = (sa[1:] != sa[:-1]) | (sb[1:] != sb[:-1])
    start = np.maximum.accumulate(np.where(new_cell, np.arange(n), 0))
    rank = np.arange(n) - start
    keep[order[rank < n_max]] = True
    return keep


def build_grid_index(points, width, height, lines=None, n_max=8, cols=GRID_COLS, rows=GRID_ROWS):
    """Bucket point (and optionally line) features into the image grid.

    Out-of-bounds features are rejected and counted; each cell keeps at most
    ``n_max`` points by descending response.
    """
    grid = GridIndex(width, height, cols, rows)
    inb = grid.in_bounds(points.uv)
    a, b = grid.cells(points.uv)
    keep = np.zeros(len(points), dtype=bool)
    idx = np.flatnonzero(inb)
    keep[idx] = cap_per_cell(a[idx], b[idx], points.response[idx], n_max)
    point_cells = {}
    for i in np.flatnonzero(keep):
        point_cells.setdefault((int(a[i]), int(b[i])), []).append(int(i))
    n_rejected = int((~inb).sum())
    line_cells = {}
    if lines is not None:
        for i, seg in enumerate(lines.seg):
            if not (grid.in_bounds(seg[:2]) and grid.in_bounds(seg[2:])):
                n_rejected += 1
                continue
            for c in grid.segment_cells(seg):
                line_cells.setdefault(c, []).append(i)
    return GridBuckets(grid, keep, point_cells, line_cells, n_rejected)


# ---------------------------------------------------------------------------
# descriptor distance and mutual best selection


def descriptor_distance(desc_a, ia, desc_b, ib):
    """Distances between ``desc_a[ia]`` and ``desc_b[ib]`` pairwise-aligned."""
    if desc_a is None or desc_b is None:
        return np.zeros(len(ia))
    da, db = desc_a[ia], desc_b[ib]
    if da.ndim == 1:
        return np.where(da == db, 0.0, np.inf)
    return _POPCOUNT[np.bitwise_xor(da, db)].sum(axis=-1).astype(float)


def mutual_best(i, j, dist, pix):
    """Keep pairs ``(i, j)`` that are each other's best candidate.

    Ordering is by descriptor distance, then pixel distance, then index.
    Returns the surviving ``(i, j)`` sorted by ``i``.
    """
    ok = np.isfinite(dist)
    i, j, dist, pix = i[ok], j[ok], dist[ok], pix[ok]
    if len(i) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    o = np.lexsort((j, pix, dist, i))
    first = np.ones(len(o), dtype=bool)
    first[1:] = i[o][1:] != i[o][:-1]
    best_for_i = dict(zip(i[o][first].tolist(), j[o][first].tolist()))
    o = np.lexsort((i, pix, dist, j))
    first = np.ones(len(o), dtype=bool)
    first[1:] = j[o][1:] != j[o][:-1]
    best_for_j = dict(zip(j[o][first].tolist(), i[o][first].tolist()))
    pairs = sorted((a, bj) for a, bj in best_for_i.items() if best_for_j.get(bj) == a)
    if not pairs:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.array(pairs, dtype=np.int64)
    return arr[:, 0], arr[:, 1]


# ---------------------------------------------------------------------------
# stereo matching


def search_width_cells(width, cfg):
    """Horizontal stereo search range ``c`` in cells."""
    return int(math.ceil(cfg.max_disparity_frac * width * cfg.cols / width))


def _stereo_rule(grid, uvL, uvR, c, cfg):
    """Boolean ``(NL, NR)`` matrix of the stereo candidate rule, plus the
    subset that fails only on minimum disparity."""
    aL, bL = grid.cells(uvL)
    aR, bR = grid.cells(uvR)
    cell_ok = (bR[None, :] == bL[:, None]) & (aR[None, :] <= aL[:, None]) & (
        aR[None, :] >= aL[:, None] - c
    )
    epi_ok = np.abs(uvL[:, None, 1] - uvR[None, :, 1]) <= cfg.epipolar_tol
    disp = uvL[:, None, 0] - uvR[None, :, 0]
    base = cell_ok & epi_ok
    return base & (disp > cfg.d_min), base & (disp <= cfg.d_min) & (disp > -cfg.d_min)


def stereo_match_points(left, right, grid, cfg, visit_log=None):
    """Match left/right points; returns ``(idx_left, idx_right, n_zero_disparity)``.

    A right point is a candidate for a left point in cell ``(a, b)`` when it
    lies in cells ``(a-c .. a, b)``, is within ``epipolar_tol`` rows and has
    disparity above ``d_min``. Only mutually best pairs survive.
    """
    c = search_width_cells(grid.width, cfg)
    ok, near_zero = _stereo_rule(grid, left.uv, right.uv, c, cfg)
    if visit_log is not None:
        aR, bR = grid.cells(right.uv)
        li, rj = np.nonzero(ok | near_zero)
        for i, j in zip(li.tolist(), rj.tolist()):
            visit_log.append((i, (int(aR[j]), int(bR[j]))))
    i, j = np.nonzero(ok)
    dist = descriptor_distance(left.desc, i, right.desc, j)
    pix = np.linalg.norm(left.uv[i] - right.uv[j], axis=1)
    mi, mj = mutual_best(i, j, dist, pix)

    # left points whose only compatible partner has (near) zero disparity
    zi, zj = np.nonzero(near_zero)
    zdist = descriptor_distance(left.desc, zi, right.desc, zj)
    zero_disp = set(zi[np.isfinite(zdist)].tolist()) - set(mi.tolist())
    return mi, mj, len(zero_disp)


def stereo_match_lines(left, right, grid, cfg):
    """Match left/right segments endpoint-wise under the point rule.

    A right segment is a candidate when both endpoints satisfy the stereo rule
    against the corresponding left endpoints (either endpoint order). Returns
    ``(idx_left, idx_right, right_seg_aligned)`` where the right segments are
    re-ordered to follow the left endpoint order.
    """
    if len(left) == 0 or len(right) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 4))
    c = search_width_cells(grid.width, cfg)
    Ls, Le = left.seg[:, :2], left.seg[:, 2:]
    Rs, Re = right.seg[:, :2], right.seg[:, 2:]
    direct = _stereo_rule(grid, Ls, Rs, c, cfg)[0] & _stereo_rule(grid, Le, Re, c, cfg)[0]
    swapped = _stereo_rule(grid, Ls, Re, c, cfg)[0] & _stereo_rule(grid, Le, Rs, c, cfg)[0]
    cand = direct | swapped
    i, j = np.nonzero(cand)
    swap = ~direct[i, j]
    rs = np.where(swap[:, None], Re[j], Rs[j])
    re = np.where(swap[:, None], Rs[j], Re[j])
    dist = descriptor_distance(left.desc, i, right.desc, j)
    pix = np.linalg.norm(Ls[i] - rs, axis=1) + np.linalg.norm(Le[i] - re, axis=1)
    mi, mj = mutual_best(i, j, dist, pix)
    lookup = {(a, b): k for k, (a, b) in enumerate(zip(i.tolist(), j.tolist()))}
    k = np.array([lookup[(a, b)] for a, b in zip(mi.tolist(), mj.tolist())], dtype=np.int64)
    aligned = np.hstack([rs[k], re[k]]) if len(k) else np.zeros((0, 4))
    return mi, mj, aligned


# ---------------------------------------------------------------------------
# stereo frame


@dataclass
class StereoFrame:
    """Stereo-matched, triangulated observations of one frame.

    Point landmarks ``pt_xyz`` and line endpoints ``ln_Xs``/``ln_Xe`` are in
    this frame's left-camera coordinates. ``ln_plucker`` holds the normalized
    ``(n, d)`` of each triangulated segment.
    """

    frame_id: int
    grid: GridIndex
    pt_ids: np.ndarray
    pt_uvL: np.ndarray
    pt_uvR: np.ndarray
    pt_desc: np.ndarray
    pt_response: np.ndarray
    pt_xyz: np.ndarray
    ln_ids: np.ndarray
    ln_segL: np.ndarray
    ln_segR: np.ndarray
    ln_desc: np.ndarray
    ln_Xs: np.ndarray
    ln_Xe: np.ndarray
    ln_plucker: np.ndarray
    exclusions: dict = field(default_factory=dict)
    timestamp: float = None

    @property
    def n_points(self):
        return len(self.pt_ids)

    @property
    def n_lines(self):
        return len(self.ln_ids)

    @property
    def ln_mid2d(self):
        return 0.5 * (self.ln_segL[:, :2] + self.ln_segL[:, 2:])

    def grid_buckets(self):
        lines = LineSet(self.ln_segL, self.ln_ids)
        return build_grid_index(
            PointSet(self.pt_uvL, self.pt_ids, None, self.pt_response),
            self.grid.width,
            self.grid.height,
            lines=lines,
            n_max=np.iinfo(np.int64).max,
            cols=self.grid.cols,
            rows=self.grid.rows,
        )


def build_stereo_frame(raw, cam, cfg=None):
    """Grid-index, stereo-match and triangulate a :class:`RawFrame`."""
    cfg = cfg or MatchConfig()
    grid = GridIndex(cam.width, cam.height, cfg.cols, cfg.rows)
    excl = {"out_of_bounds": 0, "zero_disparity": 0, "degenerate_line_triangulation": 0}

    sides = []
    for ps in (raw.left_points, raw.right_points):
        buckets = build_grid_index(ps, cam.width, cam.height, n_max=cfg.n_max, cols=cfg.cols, rows=cfg.rows)
        excl["out_of_bounds"] += buckets.n_rejected
        sides.append(ps.subset(np.flatnonzero(buckets.point_keep)))
    left, right = sides

    li, rj, n_zero = stereo_match_points(left, right, grid, cfg)
    excl["zero_disparity"] += n_zero
    xyz, ok = triangulate_stereo(left.uv[li], right.uv[rj, 0], cam, cfg.d_min)
    li, rj, xyz = li[ok], rj[ok], xyz[ok]

    line_sides = []
    for ls in (raw.left_lines, raw.right_lines):
        inb = grid.in_bounds(ls.seg[:, :2]) & grid.in_bounds(ls.seg[:, 2:])
        excl["out_of_bounds"] += int((~inb).sum())
        line_sides.append(ls.subset(np.flatnonzero(inb)))
    lleft, lright = line_sides
    mli, mlj, segR = stereo_match_lines(lleft, lright, grid, cfg)
    segL = lleft.seg[mli]
    Xs, oks = triangulate_stereo(segL[:, :2], segR[:, 0], cam, cfg.d_min)
    Xe, oke = triangulate_stereo(segL[:, 2:], segR[:, 2], cam, cfg.d_min)
    plk, okd = plucker_from_segments(np.nan_to_num(Xs), np.nan_to_num(Xe))
    good = oks & oke & okd
    excl["degenerate_line_triangulation"] += int((~good).sum())

    return StereoFrame(
        frame_id=raw.frame_id,
        grid=grid,
        pt_ids=left.ids[li],
        pt_uvL=left.uv[li],
        pt_uvR=right.uv[rj],
        pt_desc=_take(left.desc, li),
        pt_response=left.response[li],
        pt_xyz=xyz,
        ln_ids=lleft.ids[mli][good],
        ln_segL=segL[good],
        ln_segR=segR[good],
        ln_desc=_take(_take(lleft.desc, mli), good),
        ln_Xs=Xs[good],
        ln_Xe=Xe[good],
        ln_plucker=plk[good],
        exclusions=excl,
        timestamp=raw.timestamp,
    )


# ---------------------------------------------------------------------------
# temporal tracking


@dataclass
class Correspondences:
    """Frame-to-frame associations: previous-frame landmarks paired with
    current-frame left-image observations."""

    pt_prev_idx: np.ndarray
    pt_curr_idx: np.ndarray
    pt_ids: np.ndarray
    pt_xyz: np.ndarray
    pt_obs: np.ndarray
    ln_prev_idx: np.ndarray
    ln_curr_idx: np.ndarray
    ln_ids: np.ndarray
    ln_Xs: np.ndarray
    ln_Xe: np.ndarray
    ln_plucker: np.ndarray
    ln_obs: np.ndarray
    pt_weight: np.ndarray = None
    ln_weight: np.ndarray = None

    def __post_init__(self):
        if self.pt_weight is None:
            self.pt_weight = np.ones(len(self.pt_ids))
        if self.ln_weight is None:
            self.ln_weight = np.ones(len(self.ln_ids))

    @property
    def n_points(self):
        return len(self.pt_ids)

    @property
    def n_lines(self):
        return len(self.ln_ids)

    @property
    def ln_obs_mid(self):
        return 0.5 * (self.ln_obs[:, :2] + self.ln_obs[:, 2:])

    def subset(self, point_keep, line_keep):
        p, q = np.asarray(point_keep), np.asarray(line_keep)
        return Correspondences(
            self.pt_prev_idx[p],
            self.pt_curr_idx[p],
            self.pt_ids[p],
            self.pt_xyz[p],
            self.pt_obs[p],
            self.ln_prev_idx[q],
            self.ln_curr_idx[q],
            self.ln_ids[q],
            self.ln_Xs[q],
            self.ln_Xe[q],
            self.ln_plucker[q],
            self.ln_obs[q],
            self.pt_weight[p],
            self.ln_weight[q],
        )


def _track(grid, pred_uv, pred_ok, obs_uv, desc_prev, desc_curr, radius, cell_radius, visit_log=None):
    pa, pb = grid.cells(np.nan_to_num(pred_uv, nan=-1e9))
    oa, ob = grid.cells(obs_uv)
    near = (np.abs(oa[None, :] - pa[:, None]) <= cell_radius) & (
        np.abs(ob[None, :] - pb[:, None]) <= cell_radius
    )
    near &= pred_ok[:, None]
    if visit_log is not None:
        qi, cj = np.nonzero(near)
        for q, c in zip(qi.tolist(), cj.tolist()):
            visit_log.append((q, (int(pa[q]), int(pb[q])), (int(oa[c]), int(ob[c]))))
    i, j = np.nonzero(near)
    pix = np.linalg.norm(pred_uv[i] - obs_uv[j], axis=1)
    within = pix <= radius
    i, j, pix = i[within], j[within], pix[within]
    dist = descriptor_distance(desc_prev, i, desc_curr, j)
    return mutual_best(i, j, dist, pix)


def track_temporal(prev, curr, T_pred, cam, cfg=None, search_radius=None, cell_radius=None, visit_log=None):
    """Associate ``prev`` landmarks with ``curr`` observations.

    Each previous landmark (point, or 3D segment midpoint for lines) is moved
    by ``T_pred`` and projected into the current left image; candidates come
    from the predicted cell and its neighbours within ``cell_radius`` cells
    and ``search_radius`` pixels.
    """
    cfg = cfg or MatchConfig()
    radius = cfg.search_radius if search_radius is None else search_radius
    k = cfg.cell_radius if cell_radius is None else cell_radius
    grid = curr.grid

    pred, ok = project_points(T_pred.apply(prev.pt_xyz), cam)
    pi, pj = _track(grid, pred, ok, curr.pt_uvL, prev.pt_desc, curr.pt_desc, radius, k, visit_log)

    mid_prev = 0.5 * (prev.ln_Xs + prev.ln_Xe)
    pred_l, ok_l = project_points(T_pred.apply(mid_prev), cam)
    li, lj = _track(grid, pred_l, ok_l, curr.ln_mid2d, prev.ln_desc, curr.ln_desc, radius, k)

    return Correspondences(
        pt_prev_idx=pi,
        pt_curr_idx=pj,
        pt_ids=curr.pt_ids[pj],
        pt_xyz=prev.pt_xyz[pi],
        pt_obs=curr.pt_uvL[pj],
        ln_prev_idx=li,
        ln_curr_idx=lj,
        ln_ids=curr.ln_ids[lj],
        ln_Xs=prev.ln_Xs[li],
        ln_Xe=prev.ln_Xe[li],
        ln_plucker=prev.ln_plucker[li],
        ln_obs=curr.ln_segL[lj],
    )
