"""Pose of hemispherical acetabular implants from a single cone-beam ellipse."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .baseline import estimate_orientation_orthographic
from .ellipse import (
    EllipseParams,
    ImplicitConic,
    fit_ellipse,
    fit_ellipse_jacobian,
    fit_implicit,
    implicit_to_standard,
    sample_ellipse,
)
from .errors import (
    CupRegError,
    DegenerateConicError,
    DegenerateFitError,
    DegenerateGradientError,
    DegenerateProjectionError,
    ImplausibleGeometryError,
    InvalidArgumentError,
    NotAnEllipseError,
)
from .geometry import (
    Pose,
    ScannerGeometry,
    apply_pose,
    canonical_landmarks,
    project_orthographic,
    project_perspective,
    rotation_matrix,
)
from .metrics import PoseError, hausdorff_distance, pose_error
from .registration import (
    RegistrationConfig,
    RegistrationResult,
    ellipse_loss,
    forward_ellipse,
    initial_guess,
    pose_gradient,
    register,
)

__all__ = [
    "BACKEND",
    "CupRegError",
    "DegenerateConicError",
    "DegenerateFitError",
    "DegenerateGradientError",
    "DegenerateProjectionError",
    "EllipseParams",
    "ImplausibleGeometryError",
    "ImplicitConic",
    "InvalidArgumentError",
    "NotAnEllipseError",
    "Pose",
    "PoseError",
    "RegistrationConfig",
    "RegistrationResult",
    "ScannerGeometry",
    "apply_pose",
    "canonical_landmarks",
    "ellipse_loss",
    "estimate_orientation_orthographic",
    "fit_ellipse",
    "fit_ellipse_jacobian",
    "fit_implicit",
    "forward_ellipse",
    "hausdorff_distance",
    "implicit_to_standard",
    "initial_guess",
    "pose_error",
    "pose_gradient",
    "project_orthographic",
    "project_perspective",
    "register",
    "rotation_matrix",
    "sample_ellipse",
]
