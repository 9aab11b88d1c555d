"""Frame-to-frame stereo odometry pipeline.

Per frame: stereo match and triangulate, track the previous frame's
landmarks under the constant-velocity prediction, drop features in dynamic
grid cells, assemble residuals and refine the inter-frame motion with LM.

``T_p2c`` maps previous-frame camera coordinates to current-frame ones; the
trajectory stores camera-to-world poses with the first camera at the origin,
so ``abs_curr = abs_prev @ inverse(T_p2c)``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator

from .dynamic_grid import DynamicGridConfig, DynamicMask, filter_dynamic, mark_dynamic
from .exceptions import ConfigError
from .frame_grid import MatchConfig, RawFrame, StereoFrame, build_stereo_frame, track_temporal
from .geometry import CameraModel, NearSingularLogError, Pose, se3_exp, se3_log
from .residuals import MODES, assemble_blocks
from .solver import SolveReport, SolverConfig, solve

log = logging.getLogger(__name__)


@dataclass
class OdometryConfig:
    mode: str = "both_lines"
    dynamic_grid: bool = True
    rho: float = 4.0
    epipolar_tol: float = 2.0
    d_min: float = 0.5
    max_disparity_frac: float = 0.3
    n_max: int = 8
    search_radius: float = 25.0
    cell_radius: int = 1
    init_search_radius: float = 80.0
    init_cell_radius: int = 8
    min_rows: int = 8
    robust: bool = False
    huber_delta: float = 1.5
    lambda0: float = 1e-4
    lambda_factor: float = 10.0
    max_iters: int = 100
    cost_tol: float = 1e-8
    step_tol: float = 1e-10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.rho > 0:
            raise ConfigError("rho must be positive")
        if self.min_rows < 6:
            raise ConfigError("min_rows must be at least 6")

    def match_config(self):
        return MatchConfig(
            epipolar_tol=self.epipolar_tol,
            d_min=self.d_min,
            max_disparity_frac=self.max_disparity_frac,
            n_max=self.n_max,
            search_radius=self.search_radius,
            cell_radius=self.cell_radius,
        )

    def solver_config(self):
        return SolverConfig(
            lambda0=self.lambda0,
            lambda_factor=self.lambda_factor,
            max_iters=self.max_iters,
            cost_tol=self.cost_tol,
            step_tol=self.step_tol,
        )

    def dynamic_config(self):
        return DynamicGridConfig(rho=self.rho, enabled=self.dynamic_grid)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class MotionModel:
    T_p2p: Pose = field(default_factory=Pose.identity)
    valid: bool = False


@dataclass
class FrameStats:
    frame_id: int
    n_pts: int = 0
    n_lines: int = 0
    n_dyn_removed: int = 0
    iters: int = 0
    cost: float = 0.0
    n_tracked_pts: int = 0
    n_tracked_lines: int = 0
    n_stereo_pts: int = 0
    n_stereo_lines: int = 0
    coasted: bool = False
    flagged: bool = False
    exclusions: dict = field(default_factory=dict)
    report: SolveReport = None
    mask: DynamicMask = None
    dynamic_ids: dict = field(default_factory=dict)
    tracked_ids: dict = field(default_factory=dict)

    def diagnostics_line(self):
        return f"{self.frame_id} {self.n_pts} {self.n_lines} {self.n_dyn_removed} {self.iters} {self.cost!r}"


@dataclass
class OdometryState:
    trajectory: list = field(default_factory=list)
    frame_ids: list = field(default_factory=list)
    motions: list = field(default_factory=list)
    last_frame: StereoFrame = None
    model: MotionModel = field(default_factory=MotionModel)
    stats: list = field(default_factory=list)


def predict(state):
    """Constant-velocity prediction of the next inter-frame motion."""
    return state.model.T_p2p if state.model.valid else Pose.identity()


def _empty_exclusions():
    return {
        "out_of_bounds": 0,
        "zero_disparity": 0,
        "degenerate_line_triangulation": 0,
        "behind_camera": 0,
        "degenerate_line": 0,
        "empty_frame": 0,
        "insufficient_constraints": 0,
        "non_finite": 0,
    }


def process_frame(state, raw, cam, cfg=None):
    """Advance ``state`` by one :class:`RawFrame`; returns ``(state, stats)``."""
    cfg = cfg or OdometryConfig()
    curr = build_stereo_frame(raw, cam, cfg.match_config())
    stats = FrameStats(raw.frame_id, n_stereo_pts=curr.n_points, n_stereo_lines=curr.n_lines)
    stats.exclusions = _empty_exclusions()
    for key, value in curr.exclusions.items():
        stats.exclusions[key] += value
    if curr.n_points == 0 and curr.n_lines == 0:
        stats.exclusions["empty_frame"] += 1

    if state.last_frame is None:
        state.trajectory.append(Pose.identity())
        state.frame_ids.append(raw.frame_id)
        state.last_frame = curr
        state.stats.append(stats)
        return state, stats

    T_pred = predict(state)
    if state.model.valid:
        corrs = track_temporal(state.last_frame, curr, T_pred, cam, cfg.match_config())
    else:
        corrs = track_temporal(
            state.last_frame,
            curr,
            T_pred,
            cam,
            cfg.match_config(),
            search_radius=cfg.init_search_radius,
            cell_radius=cfg.init_cell_radius,
        )
    stats.n_tracked_pts, stats.n_tracked_lines = corrs.n_points, corrs.n_lines
    stats.tracked_ids = {"point": corrs.pt_ids.copy(), "line": corrs.ln_ids.copy()}

    if cfg.dynamic_grid and state.model.valid:
        mask = mark_dynamic(curr.grid, corrs, T_pred, cam, cfg.dynamic_config())
        stats.mask = mask
        stats.dynamic_ids = {
            "point": corrs.pt_ids[mask.dynamic_point_idx].copy(),
            "line": corrs.ln_ids[mask.dynamic_line_idx].copy(),
        }
        filtered = filter_dynamic(curr.grid, corrs, mask)
        stats.n_dyn_removed = (corrs.n_points - filtered.n_points) + (corrs.n_lines - filtered.n_lines)
        corrs = filtered

    robust = cfg.huber_delta if cfg.robust else None

    def builder(xi):
        return assemble_blocks(corrs, xi, cam, cfg.mode, robust)[0]

    xi0 = se3_log(T_pred)
    _, rep0 = assemble_blocks(corrs, xi0, cam, cfg.mode, robust)
    for key, value in rep0.excluded.items():
        stats.exclusions[key] += value

    T_p2c = T_pred
    if rep0.n_rows < cfg.min_rows:
        stats.coasted = True
        stats.exclusions["insufficient_constraints"] += 1
        log.warning("frame %s: %d residual rows, coasting on motion model", raw.frame_id, rep0.n_rows)
    else:
        report = solve(builder, xi0, cfg.solver_config())
        stats.report = report
        stats.iters = report.iterations
        stats.cost = float(report.final_cost)
        if report.reason == "insufficient_constraints":
            stats.coasted = True
            stats.exclusions["insufficient_constraints"] += 1
        elif not (np.all(np.isfinite(report.xi_opt)) and np.isfinite(report.final_cost)):
            stats.coasted = stats.flagged = True
            stats.exclusions["non_finite"] += 1
            log.warning("frame %s: non-finite solver output, coasting", raw.frame_id)
        else:
            T_p2c = se3_exp(report.xi_opt)
    stats.n_pts = rep0.n_point
    stats.n_lines = max(rep0.n_perp, rep0.n_para)

    try:
        se3_log(T_p2c)
        state.model = MotionModel(T_p2c, True)
    except NearSingularLogError:
        stats.flagged = True
        state.model = MotionModel()
    state.motions.append(T_p2c)
    state.trajectory.append(state.trajectory[-1] @ T_p2c.inverse())
    state.frame_ids.append(raw.frame_id)
    state.last_frame = curr
    state.stats.append(stats)
    return state, stats


def run_sequence(frames, cam, cfg=None):
    state = OdometryState()
    for raw in frames:
        process_frame(state, raw, cam, cfg)
    return state


# ---------------------------------------------------------------------------
# estimator facade


def check_frames(X):
    """Validate an iterable of :class:`RawFrame` with increasing frame ids."""
    frames = list(X)
    last = None
    for raw in frames:
        if not isinstance(raw, RawFrame):
            raise TypeError(f"expected RawFrame, got {type(raw).__name__}")
        if last is not None and raw.frame_id <= last:
            raise ValueError("frame ids must be strictly increasing")
        last = raw.frame_id
    return frames


def check_camera(camera):
    if not isinstance(camera, CameraModel):
        raise TypeError("camera must be a CameraModel")
    return camera


class StereoOdometry(BaseEstimator):
    """Estimator-style wrapper around :func:`process_frame`.

    ``fit(frames)`` runs the pipeline over a sequence and stores
    ``trajectory_`` (camera-to-world poses), ``frame_ids_`` and ``stats_``.
    ``transform``/``predict`` return the poses as an ``(n, 4, 4)`` array.
    """

    def __init__(
        self,
        camera=None,
        mode="both_lines",
        dynamic_grid=True,
        rho=4.0,
        epipolar_tol=2.0,
        search_radius=25.0,
        robust=False,
        max_iters=100,
    ):
        self.camera = camera
        self.mode = mode
        self.dynamic_grid = dynamic_grid
        self.rho = rho
        self.epipolar_tol = epipolar_tol
        self.search_radius = search_radius
        self.robust = robust
        self.max_iters = max_iters

    def _config(self):
        return OdometryConfig(
            mode=self.mode,
            dynamic_grid=self.dynamic_grid,
            rho=self.rho,
            epipolar_tol=self.epipolar_tol,
            search_radius=self.search_radius,
            robust=self.robust,
            max_iters=self.max_iters,
        )

    def fit(self, X, y=None):
        cam = check_camera(self.camera)
        frames = check_frames(X)
        state = run_sequence(frames, cam, self._config())
        self.trajectory_ = list(state.trajectory)
        self.frame_ids_ = list(state.frame_ids)
        self.stats_ = list(state.stats)
        return self

    def transform(self, X=None):
        if not hasattr(self, "trajectory_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("StereoOdometry is not fitted")
        return np.stack([T.matrix() for T in self.trajectory_]) if self.trajectory_ else np.zeros((0, 4, 4))

    def predict(self, X):
        return self.fit(X).transform()

    def score(self, X, y):
        """Negative translation APE against ground-truth poses ``y``."""
        from .harness.metrics import ape

        est = self.fit(X).transform()
        gt = np.asarray(y, dtype=float)
        return -ape(list(zip(self.frame_ids_, gt)), list(zip(self.frame_ids_, est)))[0]

    def config_dict(self):
        return asdict(self._config())
