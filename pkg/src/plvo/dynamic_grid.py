"""Dynamic-region marking on the feature grid.

Every cell of the current frame is scored by the mean squared pixel error
between its tracked point observations and where the constant-velocity
motion model predicts them. Cells scoring above ``rho`` are flagged together
with their 8 neighbours, and correspondences observed inside flagged cells
are dropped before pose estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .geometry import project_point, project_points


@dataclass
class DynamicGridConfig:
    rho: float = 4.0
    enabled: bool = True

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")


@dataclass
class DynamicMask:
    flagged: np.ndarray  # (rows, cols) bool
    seeds: np.ndarray  # (rows, cols) bool
    cell_error: np.ndarray  # (rows, cols) float, NaN for unscored cells
    dynamic_point_idx: np.ndarray  # indices into the correspondences
    dynamic_line_idx: np.ndarray

    @property
    def flagged_cells(self):
        b, a = np.nonzero(self.flagged)
        return set(zip(a.tolist(), b.tolist()))

    @property
    def seed_cells(self):
        b, a = np.nonzero(self.seeds)
        return set(zip(a.tolist(), b.tolist()))

    @property
    def is_empty(self):
        return not self.flagged.any()

    def to_lines(self, frame_id):
        """``frame_id a b`` text rows, one per flagged cell."""
        return [f"{frame_id} {a} {b}" for a, b in sorted(self.flagged_cells)]


def prediction_error_point(P_prev, obs, T_pred, cam):
    """Squared pixel distance between ``obs`` and the predicted projection."""
    uv = project_point(T_pred.apply(P_prev), cam)
    diff = np.asarray(obs, dtype=float) - uv
    return float(diff @ diff)


def prediction_error_line(Xs_prev, Xe_prev, obs_mid, T_pred, cam):
    """Squared pixel distance between an observed 2D segment midpoint and the
    predicted projection of the previous 3D midpoint."""
    mid = 0.5 * (np.asarray(Xs_prev, dtype=float) + np.asarray(Xe_prev, dtype=float))
    return prediction_error_point(mid, obs_mid, T_pred, cam)


def prediction_errors(corrs, T_pred, cam):
    """Batched squared errors for points and line midpoints.

    Returns ``(e_points, e_lines)``; entries whose landmark lands behind the
    camera are NaN.
    """
    uv, ok = project_points(T_pred.apply(corrs.pt_xyz), cam)
    e_pt = np.where(ok, ((corrs.pt_obs - uv) ** 2).sum(axis=1), np.nan)
    mid = 0.5 * (corrs.ln_Xs + corrs.ln_Xe)
    uvm, okm = project_points(T_pred.apply(mid), cam)
    e_ln = np.where(okm, ((corrs.ln_obs_mid - uvm) ** 2).sum(axis=1), np.nan)
    return e_pt, e_ln


def _cell_masks(grid, uv):
    a, b = grid.cells(uv)
    inside = (a >= 0) & (a < grid.cols) & (b >= 0) & (b < grid.rows)
    return np.clip(a, 0, grid.cols - 1), np.clip(b, 0, grid.rows - 1), inside


def dilate(seeds):
    """3x3 dilation with clamping at the border."""
    out = seeds.copy()
    rows, cols = seeds.shape
    for db in (-1, 0, 1):
        for da in (-1, 0, 1):
            if da == 0 and db == 0:
                continue
            src_b = slice(max(0, -db), rows - max(0, db))
            dst_b = slice(max(0, db), rows - max(0, -db))
            src_a = slice(max(0, -da), cols - max(0, da))
            dst_a = slice(max(0, da), cols - max(0, -da))
            out[dst_b, dst_a] |= seeds[src_b, src_a]
    return out


def mark_dynamic(grid, corrs, T_pred, cam, cfg=None, errors=None):
    """Flag dynamic cells from tracked correspondences.

    Only point errors score cells (mean over the cell's tracked points); lines
    are classified by the cell of their observed midpoint.
    """
    cfg = cfg or DynamicGridConfig()
    e_pt, _ = prediction_errors(corrs, T_pred, cam) if errors is None else errors
    shape = (grid.rows, grid.cols)
    a, b, inside = _cell_masks(grid, corrs.pt_obs)
    use = inside & np.isfinite(e_pt)
    sums = np.zeros(shape)
    counts = np.zeros(shape)
    np.add.at(sums, (b[use], a[use]), e_pt[use])
    np.add.at(counts, (b[use], a[use]), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cell_error = np.where(counts > 0, sums / counts, np.nan)
    seeds = np.nan_to_num(cell_error, nan=-np.inf) > cfg.rho
    flagged = dilate(seeds)

    pt_dyn = inside & flagged[b, a]
    ln_dyn = in_flagged_cells(grid, corrs.ln_obs_mid, flagged)
    return DynamicMask(flagged, seeds, cell_error, np.flatnonzero(pt_dyn), np.flatnonzero(ln_dyn))


def in_flagged_cells(grid, uv, flagged):
    a, b, inside = _cell_masks(grid, uv)
    return inside & flagged[b, a]


def filter_dynamic(grid, corrs, mask):
    """Drop correspondences whose current observation (point, or segment
    midpoint for lines) falls in a flagged cell."""
    keep_p = ~in_flagged_cells(grid, corrs.pt_obs, mask.flagged)
    keep_l = ~in_flagged_cells(grid, corrs.ln_obs_mid, mask.flagged)
    if keep_p.all() and keep_l.all():
        return corrs
    return corrs.subset(np.flatnonzero(keep_p), np.flatnonzero(keep_l))
