"""Motion-robust lidar registration."""

from ._skewreg import (
    PointCloud,
    Pose,
    deskew,
    fit_linear,
    register,
    sigma_from_residual,
    simulate,
    slam,
    true_twists,
    weigh,
)

__all__ = [
    "PointCloud",
    "Pose",
    "deskew",
    "fit_linear",
    "register",
    "sigma_from_residual",
    "simulate",
    "slam",
    "true_twists",
    "weigh",
]
