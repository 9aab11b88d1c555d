"""Absolute and relative pose error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError, TrajectoryMismatchError
from ..geometry import Pose, rotation_angle


@dataclass
class Trajectory:
    """Time-ordered camera-to-world poses keyed by frame id."""

    frame_ids: list
    poses: list

    def __post_init__(self):
        self.frame_ids = [int(i) for i in self.frame_ids]
        self.poses = [p if isinstance(p, Pose) else Pose.from_matrix(p) for p in self.poses]
        if len(self.frame_ids) != len(self.poses):
            raise ValueError("frame_ids and poses differ in length")
        if any(b <= a for a, b in zip(self.frame_ids, self.frame_ids[1:])):
            raise ValueError("frame ids must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls([i for i, _ in pairs], [p for _, p in pairs])

    def __len__(self):
        return len(self.poses)

    def positions(self):
        return np.array([p.t for p in self.poses]).reshape(-1, 3)


def as_trajectory(traj):
    if isinstance(traj, Trajectory):
        return traj
    return Trajectory.from_pairs(traj)


def _paired(gt, est):
    gt, est = as_trajectory(gt), as_trajectory(est)
    g, e = set(gt.frame_ids), set(est.frame_ids)
    if g != e:
        raise TrajectoryMismatchError(sorted(g - e), sorted(e - g))
    lookup = dict(zip(est.frame_ids, est.poses))
    return gt.poses, [lookup[i] for i in gt.frame_ids]


def align_se3(gt_positions, est_positions):
    """Rigid (no scale) least-squares alignment ``S`` with ``S @ est ~ gt``."""
    X = np.asarray(est_positions, dtype=float)
    Y = np.asarray(gt_positions, dtype=float)
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    C = (Y - my).T @ (X - mx) / len(X)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return Pose(R, my - R @ mx)


def ape(gt, est, align=False):
    """``(translation RMSE [m], rotation RMSE [deg])`` of ``gt_i^-1 est_i``."""
    gt_poses, est_poses = _paired(gt, est)
    if not gt_poses:
        return 0.0, 0.0
    if align:
        S = align_se3([p.t for p in gt_poses], [p.t for p in est_poses])
        est_poses = [S @ p for p in est_poses]
    t2 = np.empty(len(gt_poses))
    r2 = np.empty(len(gt_poses))
    for k, (g, e) in enumerate(zip(gt_poses, est_poses)):
        # |t(gt^-1 est)| = |R_g^T (t_e - t_g)| = |t_e - t_g|
        d = e.t - g.t
        t2[k] = d @ d
        r2[k] = rotation_angle(g.R.T @ e.R) ** 2
    return math.sqrt(t2.mean()), math.degrees(math.sqrt(r2.mean()))


def rpe(gt, est, delta=1):
    """RMSE of ``(gt_i^-1 gt_{i+delta})^-1 (est_i^-1 est_{i+delta})``.

    Returns ``(translation RMSE [m], rotation RMSE [deg])``.
    """
    if int(delta) != delta or delta <= 0:
        raise ConfigError(f"delta must be a positive integer, got {delta}")
    delta = int(delta)
    gt_poses, est_poses = _paired(gt, est)
    if len(gt_poses) <= delta:
        raise ConfigError(f"trajectory of length {len(gt_poses)} is too short for delta={delta}")
    t2, r2 = [], []
    for i in range(len(gt_poses) - delta):
        rel_g = gt_poses[i].inverse() @ gt_poses[i + delta]
        rel_e = est_poses[i].inverse() @ est_poses[i + delta]
        E = rel_g.inverse() @ rel_e
        t2.append(E.t @ E.t)
        r2.append(rotation_angle(E.R) ** 2)
    return math.sqrt(np.mean(t2)), math.degrees(math.sqrt(np.mean(r2)))
