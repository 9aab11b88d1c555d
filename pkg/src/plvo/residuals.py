"""Point, perpendicular-line and parallel-line reprojection residuals.

All residuals are observed-minus-predicted in pixels and all Jacobians are
taken with respect to a left perturbation ``exp(delta) @ T`` of the current
estimate, columns ordered ``[v, w]``.

The perpendicular residual of a line is the signed distance of each observed
endpoint to the infinite image line obtained by moving the previous-frame
Plücker line and projecting its moment. Its Jacobian is obtained by the chain
rule through the projected 3D endpoints of the previous segment, which reuses
the point projection Jacobian; when the observed endpoints coincide with the
projected ones it reduces to ``-[l1 l2] dproj/dxi / |l12|``
(:func:`line_perp_jacobian_first_order`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BehindCameraError, ConfigError, DegenerateLineError
from .geometry import (
    LINE_EPS,
    Z_MIN,
    Pose,
    project_lines,
    project_points,
    se3_exp,
    skew_batch,
    transform_lines,
)

MODES = ("points_only", "perp_only_lines", "para_only_lines", "both_lines")

# moved segments projecting shorter than this (pixels) count as lines through
# the optical center: their image line direction is numerically meaningless
MIN_LINE_PX = 1.0

_MODE_TERMS = {
    "points_only": ("point",),
    "perp_only_lines": ("point", "line_perp"),
    "para_only_lines": ("point", "line_para"),
    "both_lines": ("point", "line_perp", "line_para"),
}


def _as_pose(xi_or_T):
    return xi_or_T if isinstance(xi_or_T, Pose) else se3_exp(xi_or_T)


def projection_jacobian(Pc, cam):
    """``d(u, v)/d(delta)`` at camera-frame points ``Pc``, shape ``(N, 2, 6)``."""
    Pc = np.asarray(Pc, dtype=float).reshape(-1, 3)
    X, Y, Z = Pc[:, 0], Pc[:, 1], Pc[:, 2]
    fx, fy = cam.fx, cam.fy
    iz = 1.0 / Z
    iz2 = iz * iz
    J = np.zeros((len(Pc), 2, 6))
    J[:, 0, 0] = fx * iz
    J[:, 0, 2] = -fx * X * iz2
    J[:, 0, 3] = -fx * X * Y * iz2
    J[:, 0, 4] = fx + fx * X * X * iz2
    J[:, 0, 5] = -fx * Y * iz
    J[:, 1, 1] = fy * iz
    J[:, 1, 2] = -fy * Y * iz2
    J[:, 1, 3] = -fy - fy * Y * Y * iz2
    J[:, 1, 4] = fy * X * Y * iz2
    J[:, 1, 5] = fy * X * iz
    return J


# ---------------------------------------------------------------------------
# points


def point_residuals(P_prev, obs, T, cam, z_min=Z_MIN):
    """Batched point residuals ``obs - proj(T P_prev)``; returns ``(r, valid)``."""
    T = _as_pose(T)
    uv, valid = project_points(T.apply(np.asarray(P_prev, dtype=float).reshape(-1, 3)), cam, z_min)
    return np.asarray(obs, dtype=float).reshape(-1, 2) - uv, valid


def point_jacobians(P_prev, T, cam, z_min=Z_MIN):
    T = _as_pose(T)
    Pc = T.apply(np.asarray(P_prev, dtype=float).reshape(-1, 3))
    valid = Pc[:, 2] > z_min
    Pc = np.where(valid[:, None], Pc, np.array([0.0, 0.0, 1.0]))
    return -projection_jacobian(Pc, cam), valid


def point_residual(P_prev, obs, xi, cam):
    r, ok = point_residuals(P_prev, obs, xi, cam)
    if not ok[0]:
        raise BehindCameraError("transformed point is behind the camera")
    return r[0]


def point_jacobian(P_prev, xi, cam):
    J, ok = point_jacobians(P_prev, xi, cam)
    if not ok[0]:
        raise BehindCameraError("transformed point is behind the camera")
    return J[0]


# ---------------------------------------------------------------------------
# lines, perpendicular term


def _signed_distances(l, seg):
    m = np.sqrt(l[:, 0] ** 2 + l[:, 1] ** 2)
    ds = (seg[:, 0] * l[:, 0] + seg[:, 1] * l[:, 1] + l[:, 2]) / m
    de = (seg[:, 2] * l[:, 0] + seg[:, 3] * l[:, 1] + l[:, 2]) / m
    return np.column_stack([ds, de])


def line_perp_residuals(L_prev, obs_seg, T, cam, eps=LINE_EPS):
    """Signed distances of observed endpoints to the projected moved line.

    ``L_prev`` holds ``(N, 6)`` Plücker vectors in the previous frame and
    ``obs_seg`` the ``(us, vs, ue, ve)`` observations in the current image.
    Returns ``(r, valid)``; invalid rows are lines through the optical center.
    """
    T = _as_pose(T)
    obs_seg = np.asarray(obs_seg, dtype=float).reshape(-1, 4)
    l, valid = project_lines(transform_lines(L_prev, T), cam, eps)
    l = np.where(valid[:, None], l, np.array([1.0, 0.0, 0.0]))
    return _signed_distances(l, obs_seg), valid


def line_perp_jacobians(Xs_prev, Xe_prev, obs_seg, T, cam, min_px=MIN_LINE_PX, z_min=Z_MIN):
    """Stacked ``(N, 2, 6)`` Jacobian of ``(d_s, d_e)``.

    Uses the previous segment's endpoints, moved by ``T``, as anchors: the
    image line through their projections ``a`` and ``b`` equals the projected
    Plücker line up to a positive factor, so

    ``dd/dxi = dd/da . dproj(Xs')/dxi + dd/db . dproj(Xe')/dxi``.
    """
    T = _as_pose(T)
    obs_seg = np.asarray(obs_seg, dtype=float).reshape(-1, 4)
    Ps = T.apply(np.asarray(Xs_prev, dtype=float).reshape(-1, 3))
    Pe = T.apply(np.asarray(Xe_prev, dtype=float).reshape(-1, 3))
    n = len(Ps)
    valid = (Ps[:, 2] > z_min) & (Pe[:, 2] > z_min)
    safe = np.array([0.0, 0.0, 1.0])
    Ps = np.where(valid[:, None], Ps, safe)
    Pe = np.where(valid[:, None], Pe + 0.0, safe + np.array([1.0, 0.0, 0.0]))

    ua, _ = project_points(Ps, cam)
    ub, _ = project_points(Pe, cam)
    a = np.column_stack([ua, np.ones(n)])
    b = np.column_stack([ub, np.ones(n)])
    l = np.cross(a, b)
    m2 = l[:, 0] ** 2 + l[:, 1] ** 2  # squared projected length, since a and b have unit w
    valid &= m2 >= min_px**2
    m2 = np.where(valid, m2, 1.0)
    m = np.sqrt(m2)

    p = np.stack(
        [
            np.column_stack([obs_seg[:, 0], obs_seg[:, 1], np.ones(n)]),
            np.column_stack([obs_seg[:, 2], obs_seg[:, 3], np.ones(n)]),
        ],
        axis=1,
    )  # (N, 2, 3)
    num = np.einsum("nkj,nj->nk", p, l)
    dl = p / m[:, None, None]
    dl[:, :, 0] -= num * l[:, None, 0] / (m2 * m)[:, None]
    dl[:, :, 1] -= num * l[:, None, 1] / (m2 * m)[:, None]
    # l = a x b:  dl/da = -[b]x,  dl/db = [a]x; only the pixel components vary
    dda = np.einsum("nkj,nji->nki", dl, -skew_batch(b))[:, :, :2]
    ddb = np.einsum("nkj,nji->nki", dl, skew_batch(a))[:, :, :2]
    J = np.einsum("nki,nic->nkc", dda, projection_jacobian(Ps, cam)) + np.einsum(
        "nki,nic->nkc", ddb, projection_jacobian(Pe, cam)
    )
    return J, valid


def line_perp_gradient(Xs_prev, Xe_prev, L_prev, obs_seg, T, cam):
    """Residual-weighted combination ``d_s dd_s/dxi + d_e dd_e/dxi``.

    This is the gradient of ``(d_s^2 + d_e^2) / 2``. Returns ``(g, valid)``
    with ``g`` of shape ``(N, 6)``.
    """
    r, ok_r = line_perp_residuals(L_prev, obs_seg, T, cam)
    J, ok_j = line_perp_jacobians(Xs_prev, Xe_prev, obs_seg, T, cam)
    return np.einsum("nk,nkc->nc", r, J), ok_r & ok_j


def line_perp_jacobian_first_order(Xs_prev, Xe_prev, obs_seg, T, cam, eps=LINE_EPS, z_min=Z_MIN):
    """Per-endpoint ``-[l1 l2] / |l12| . dproj(P')/dxi`` with ``l`` the
    projected line and ``P'`` the moved 3D endpoint anchoring each observed
    endpoint.

    Exact when the observed endpoints coincide with the projected anchors;
    otherwise a first-order approximation of :func:`line_perp_jacobians`.
    """
    T = _as_pose(T)
    Ps = T.apply(np.asarray(Xs_prev, dtype=float).reshape(-1, 3))
    Pe = T.apply(np.asarray(Xe_prev, dtype=float).reshape(-1, 3))
    valid = (Ps[:, 2] > z_min) & (Pe[:, 2] > z_min)
    ua, _ = project_points(Ps, cam)
    ub, _ = project_points(Pe, cam)
    n = len(Ps)
    l = np.cross(np.column_stack([ua, np.ones(n)]), np.column_stack([ub, np.ones(n)]))
    m = np.sqrt(l[:, 0] ** 2 + l[:, 1] ** 2)
    valid &= m >= eps
    g = -l[:, :2] / np.where(valid, m, 1.0)[:, None]
    Js = np.einsum("ni,nic->nc", g, projection_jacobian(Ps, cam))
    Je = np.einsum("ni,nic->nc", g, projection_jacobian(Pe, cam))
    return np.stack([Js, Je], axis=1), valid


def line_perp_residual(L_prev, obs_endpoints, xi, cam):
    """Scalar form of :func:`line_perp_residuals` for one line."""
    vec = L_prev.as_vector() if hasattr(L_prev, "as_vector") else L_prev
    r, ok = line_perp_residuals(vec, np.ravel(obs_endpoints), xi, cam)
    if not ok[0]:
        raise DegenerateLineError("projected line is degenerate")
    return r[0]


def line_perp_jacobian(seg_prev, obs_endpoints, xi, cam):
    J, ok = line_perp_jacobians(seg_prev.Xs, seg_prev.Xe, np.ravel(obs_endpoints), xi, cam)
    if not ok[0]:
        raise DegenerateLineError("projected line is degenerate or behind the camera")
    return J[0]


# ---------------------------------------------------------------------------
# lines, parallel (midpoint) term


def line_para_residuals(Xs_prev, Xe_prev, obs_mid, T, cam, z_min=Z_MIN):
    mid = 0.5 * (np.asarray(Xs_prev, dtype=float) + np.asarray(Xe_prev, dtype=float))
    return point_residuals(mid, obs_mid, T, cam, z_min)


def line_para_jacobians(Xs_prev, Xe_prev, T, cam, z_min=Z_MIN):
    mid = 0.5 * (np.asarray(Xs_prev, dtype=float) + np.asarray(Xe_prev, dtype=float))
    return point_jacobians(mid, T, cam, z_min)


def line_para_residual(seg_prev, obs_mid, xi, cam):
    return point_residual(seg_prev.midpoint, obs_mid, xi, cam)


def line_para_jacobian(seg_prev, xi, cam):
    return point_jacobian(seg_prev.midpoint, xi, cam)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class ResidualBlock:
    """A batch of same-kind cost terms: ``r`` ``(N, k)``, ``J`` ``(N, k, 6)``
    and information matrices ``W`` ``(N, k, k)``."""

    kind: str
    r: np.ndarray
    J: np.ndarray
    W: np.ndarray
    ids: np.ndarray = None
    robust_delta: float = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        if self.r.ndim == 1:
            self.r = self.r[None, :]
        k = self.r.shape[1]
        self.J = np.asarray(self.J, dtype=float).reshape(len(self.r), k, 6)
        if self.W is None:
            self.W = np.broadcast_to(np.eye(k), (len(self.r), k, k))
        else:
            self.W = np.asarray(self.W, dtype=float).reshape(len(self.r), k, k)
        if self.ids is None:
            self.ids = np.arange(len(self.r))

    def __len__(self):
        return len(self.r)

    @property
    def n_rows(self):
        return self.r.size


@dataclass
class AssemblyReport:
    n_point: int = 0
    n_perp: int = 0
    n_para: int = 0
    excluded: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return 2 * (self.n_point + self.n_perp + self.n_para)


def _weights(w, k):
    return np.asarray(w, dtype=float)[:, None, None] * np.eye(k)[None]


def _sorted_block(kind, r, J, w, ids, robust_delta):
    order = np.argsort(ids, kind="stable")
    return ResidualBlock(kind, r[order], J[order], _weights(w[order], r.shape[1]), ids[order], robust_delta)


def assemble_blocks(corrs, xi, cam, mode="both_lines", robust_delta=None):
    """Residual blocks for every active term of ``mode``.

    Returns ``(blocks, report)``. Terms that cannot be evaluated (landmark
    behind the camera, line through the optical center) are dropped and
    counted in ``report.excluded``.
    """
    if mode not in _MODE_TERMS:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    T = _as_pose(xi)
    terms = _MODE_TERMS[mode]
    blocks = []
    rep = AssemblyReport(excluded={"behind_camera": 0, "degenerate_line": 0})

    r, ok = point_residuals(corrs.pt_xyz, corrs.pt_obs, T, cam)
    J, _ = point_jacobians(corrs.pt_xyz, T, cam)
    rep.excluded["behind_camera"] += int((~ok).sum())
    if ok.any():
        blocks.append(
            _sorted_block("point", r[ok], J[ok], corrs.pt_weight[ok], corrs.pt_ids[ok], robust_delta)
        )
    rep.n_point = int(ok.sum())

    if "line_perp" in terms and corrs.n_lines:
        r, ok_r = line_perp_residuals(corrs.ln_plucker, corrs.ln_obs, T, cam)
        J, ok_j = line_perp_jacobians(corrs.ln_Xs, corrs.ln_Xe, corrs.ln_obs, T, cam)
        ok = ok_r & ok_j
        rep.excluded["degenerate_line"] += int((~ok).sum())
        if ok.any():
            blocks.append(
                _sorted_block("line_perp", r[ok], J[ok], corrs.ln_weight[ok], corrs.ln_ids[ok], robust_delta)
            )
        rep.n_perp = int(ok.sum())

    if "line_para" in terms and corrs.n_lines:
        r, ok = line_para_residuals(corrs.ln_Xs, corrs.ln_Xe, corrs.ln_obs_mid, T, cam)
        J, _ = line_para_jacobians(corrs.ln_Xs, corrs.ln_Xe, T, cam)
        rep.excluded["behind_camera"] += int((~ok).sum())
        if ok.any():
            blocks.append(
                _sorted_block("line_para", r[ok], J[ok], corrs.ln_weight[ok], corrs.ln_ids[ok], robust_delta)
            )
        rep.n_para = int(ok.sum())
    return blocks, rep
