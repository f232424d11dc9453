"""Synthetic capture pipeline: lighting schedule, rig, shading oracle, dataset files."""

from .dataset import DatasetReader, ExpressionFrame, generate_dataset, read_dataset, write_dataset
from .rig import LightRig, desk_cameras, desk_rig
from .scene import (
    SyntheticScene,
    apply_pose,
    expression_at,
    pose_at,
    shade_frame,
    stabilize_camera,
    stabilize_point,
)
from .schedule import FULL_ON, LightingSchedule, generate_schedule, interpolate_tracked_params

__all__ = [
    "DatasetReader",
    "ExpressionFrame",
    "FULL_ON",
    "LightRig",
    "LightingSchedule",
    "SyntheticScene",
    "apply_pose",
    "desk_cameras",
    "desk_rig",
    "expression_at",
    "generate_dataset",
    "generate_schedule",
    "interpolate_tracked_params",
    "pose_at",
    "read_dataset",
    "shade_frame",
    "stabilize_camera",
    "stabilize_point",
    "write_dataset",
]
