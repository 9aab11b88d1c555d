"""Stereo visual odometry from point and line features with dynamic-grid
outlier rejection."""

from .exceptions import ConfigError, GeometryError, ParseError, PLVOError, TrajectoryMismatchError
from .geometry import CameraModel, Pose
from .odometry import OdometryConfig, StereoOdometry, process_frame, run_sequence

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "ConfigError",
    "GeometryError",
    "OdometryConfig",
    "PLVOError",
    "ParseError",
    "Pose",
    "StereoOdometry",
    "TrajectoryMismatchError",
    "process_frame",
    "run_sequence",
]
