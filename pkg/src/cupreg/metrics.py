"""Ellipse and pose error measures."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy.spatial.distance import cdist

from .ellipse import EllipseParams, sample_ellipse
from .errors import InvalidArgumentError
from .geometry import Pose, wrap_half_turn

__all__ = ["PoseError", "hausdorff_distance", "pose_error", "DEFAULT_HD_SAMPLES"]

DEFAULT_HD_SAMPLES = 360


@dataclass(frozen=True)
class PoseError:
    theta_err: float
    phi_err: float
    inplane_err: float
    h_err: float

    def to_dict(self) -> dict:
        return asdict(self)


def hausdorff_distance(
    e1: EllipseParams,
    e2: EllipseParams,
    m: int = DEFAULT_HD_SAMPLES,
    pixel_pitch: float | None = None,
) -> float:
    """Symmetric Hausdorff distance between ``m``-point samplings of two ellipses.

    Returned in the ellipse units (mm), or in pixels when ``pixel_pitch`` (mm/px)
    is given.
    """
    if m < 64:
        raise InvalidArgumentError(f"need m >= 64 samples, got {m}")
    d = cdist(sample_ellipse(e1, m), sample_ellipse(e2, m))
    hd = float(max(d.min(axis=1).max(), d.min(axis=0).max()))
    return hd / pixel_pitch if pixel_pitch else hd


def pose_error(truth: Pose, estimate: Pose) -> PoseError:
    """Absolute errors; phi is compared modulo 180 degrees."""
    return PoseError(
        theta_err=abs(estimate.theta - truth.theta),
        phi_err=abs(wrap_half_turn(estimate.phi - truth.phi)),
        inplane_err=math.hypot(estimate.k - truth.k, estimate.l - truth.l),
        h_err=abs(estimate.h - truth.h),
    )
