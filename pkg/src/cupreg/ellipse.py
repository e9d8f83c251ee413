"""Least-squares conic fitting and implicit/standard ellipse conversion.

Points are centered and whitened by their covariance before the scatter
matrix is formed, so even a thin ellipse is fitted as a near-circle. The
fitted conic is mapped back to input coordinates in product form. Every step
is differentiable, see :func:`fit_ellipse_jacobian`.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, NotAnEllipseError
from .geometry import MIN_LANDMARKS

__all__ = [
    "EllipseParams",
    "ImplicitConic",
    "fit_implicit",
    "implicit_to_standard",
    "fit_ellipse",
    "fit_ellipse_jacobian",
    "sample_ellipse",
]


@dataclass(frozen=True)
class EllipseParams:
    """Center (x, y), semi-axes a >= b > 0 and major-axis angle alpha in (-90, 90] degrees."""

    x: float
    y: float
    a: float
    b: float
    alpha: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "EllipseParams":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class ImplicitConic:
    """Coefficients of A x^2 + B xy + C y^2 + D x + E y + F = 0.

    Stored with unit Euclidean norm and A + C > 0.
    """

    A: float
    B: float
    C: float
    D: float
    E: float
    F: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "ImplicitConic":
        v = np.asarray(values, dtype=float)
        v = v / np.linalg.norm(v)
        if v[0] + v[2] < 0:
            v = -v
        return cls(*(float(c) for c in v))

    @property
    def discriminant(self) -> float:
        return self.B * self.B - 4.0 * self.A * self.C

    def evaluate(self, points) -> np.ndarray:
        """Algebraic residual of each point."""
        p = np.asarray(points, dtype=float)
        x, y = p[:, 0], p[:, 1]
        A, B, C, D, E, F = astuple(self)
        return A * x * x + B * x * y + C * y * y + D * x + E * y + F


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidArgumentError(f"expected an (n, 2) array of points, got shape {pts.shape}")
    if pts.shape[0] < MIN_LANDMARKS:
        raise InvalidArgumentError(
            f"ellipse fit needs at least {MIN_LANDMARKS} points, got {pts.shape[0]}"
        )
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("points contain non-finite values")
    return pts


def fit_implicit(points) -> ImplicitConic:
    """Algebraic least-squares conic through ``points``.

    The coefficient vector is the eigenvector of the scatter matrix of the
    lifted points [x^2, xy, y^2, x, y, 1] with the smallest eigenvalue.

    Raises:
        DegenerateFitError: the two smallest eigenvalues are (numerically) equal,
            e.g. collinear points, or the best conic is not an ellipse.
    """
    pts = _check_points(points)
    _, _, conic = kernels.fit_points(pts)
    result = ImplicitConic(*(float(c) for c in conic))
    if not result.discriminant < 0.0:
        raise NotAnEllipseError("best-fit conic is not an ellipse")
    return result


def implicit_to_standard(conic: ImplicitConic) -> EllipseParams:
    """Convert implicit coefficients to (x, y, a, b, alpha)."""
    params, _ = kernels.conic_to_standard(conic.as_array())
    return EllipseParams.from_array(params)


def fit_ellipse(points) -> EllipseParams:
    """Fit an ellipse to at least six 2D points."""
    pts = _check_points(points)
    params, _, _ = kernels.fit_points(pts)
    return EllipseParams.from_array(params)


def fit_ellipse_jacobian(points) -> tuple[EllipseParams, np.ndarray]:
    """Fitted ellipse and the (5, n, 2) derivative of its parameters w.r.t. the points."""
    pts = _check_points(points)
    n = pts.shape[0]
    eye = np.eye(2 * n).reshape(n, 2, 2 * n)
    params, dparams, _ = kernels.fit_points(pts, eye)
    return EllipseParams.from_array(params), dparams.reshape(5, n, 2)


def sample_ellipse(params: EllipseParams, m: int) -> np.ndarray:
    """``m`` points at equally spaced parametric angles, starting on the major axis."""
    if m < 2:
        raise InvalidArgumentError(f"need m >= 2 samples, got {m}")
    t = 2.0 * np.pi * np.arange(m) / m
    ca = math.cos(math.radians(params.alpha))
    sa = math.sin(math.radians(params.alpha))
    u = params.a * np.cos(t)
    v = params.b * np.sin(t)
    return np.column_stack([params.x + ca * u - sa * v, params.y + sa * u + ca * v])
