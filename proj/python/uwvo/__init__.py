"""Monocular keyframe visual odometry (Python bindings)."""

from ._uwvo import (
    CameraModel,
    Error,
    FrameResult,
    Odometry,
    Pose,
    SyntheticScene,
    ate_rmse,
    default_config,
    final_drift_pct,
    generate_scene,
    observe,
    p3p,
    project,
    read_calibration,
    read_trajectory,
    render_plane_sequence,
    run_survival,
    triangulate,
    umeyama_align,
    write_trajectory,
)

__all__ = [
    "CameraModel",
    "Error",
    "FrameResult",
    "Odometry",
    "Pose",
    "SyntheticScene",
    "ate_rmse",
    "default_config",
    "final_drift_pct",
    "generate_scene",
    "observe",
    "p3p",
    "project",
    "read_calibration",
    "read_trajectory",
    "render_plane_sequence",
    "run_survival",
    "triangulate",
    "umeyama_align",
    "write_trajectory",
]
