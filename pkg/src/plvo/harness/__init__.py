"""Data ingestion, synthetic scenes, evaluation metrics and the CLI."""

from .metrics import Trajectory, align_se3, ape, rpe
from .synthetic import (
    DynamicObjectConfig,
    SyntheticSceneConfig,
    SyntheticSequence,
    constant_velocity_path,
    generate_synthetic,
    write_synthetic,
)

__all__ = [
    "DynamicObjectConfig",
    "SyntheticSceneConfig",
    "SyntheticSequence",
    "Trajectory",
    "align_se3",
    "ape",
    "constant_velocity_path",
    "generate_synthetic",
    "rpe",
    "write_synthetic",
]
