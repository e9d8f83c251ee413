"""Orientation from the ellipse axis ratio under parallel projection."""

from __future__ import annotations

import math

from .ellipse import EllipseParams
from .errors import InvalidArgumentError

__all__ = ["estimate_orientation_orthographic"]


def estimate_orientation_orthographic(observed: EllipseParams) -> tuple[float, float]:
    """Return (theta, phi) in degrees assuming orthographic projection.

    A rim circle of radius r tilted by theta projects to semi-axes
    (r, r sin theta) with the major axis along phi, so
    theta = asin(b / a) and phi = alpha. No translation is estimated.
    """
    a, b = observed.a, observed.b
    if not (a > 0 and b > 0):
        raise InvalidArgumentError("semi-axes must be positive")
    if b > a:
        raise InvalidArgumentError(f"minor axis {b} exceeds major axis {a}")
    theta = math.degrees(math.asin(min(b / a, 1.0)))
    return theta, observed.alpha
