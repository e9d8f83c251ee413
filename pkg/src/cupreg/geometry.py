"""Implant rim landmarks, rigid pose and cone-beam projection.

Conventions: the detector is the plane z = 0, the X-ray source sits at
(0, 0, H) and image axes coincide with world x/y. Angles are in degrees at
every public boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjectionError, InvalidArgumentError

__all__ = [
    "Pose",
    "ScannerGeometry",
    "canonical_landmarks",
    "rotation_matrix",
    "apply_pose",
    "project_perspective",
    "project_orthographic",
    "wrap_half_turn",
]

MIN_LANDMARKS = 6


def wrap_half_turn(angle: float) -> float:
    """Map an angle in degrees into (-90, 90] (period 180)."""
    wrapped = math.fmod(angle + 90.0, 180.0)
    if wrapped <= 0.0:
        wrapped += 180.0
    return wrapped - 90.0


@dataclass(frozen=True)
class Pose:
    """Five registration unknowns of the cup.

    ``theta`` is anteversion (rotation out of the image plane) and ``phi``
    inclination (rotation within it), both in degrees. ``k``, ``l`` translate
    the rim center in the detector plane and ``h`` is its height above the
    detector, all in mm.
    """

    theta: float
    phi: float
    k: float
    l: float  # noqa: E741
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.k, self.l, self.h], dtype=float)

    @classmethod
    def from_array(cls, values) -> "Pose":
        t, p, k, l, h = (float(v) for v in values)  # noqa: E741
        return cls(t, p, k, l, h)

    def normalized(self) -> "Pose":
        """Return the pose with theta in [0, 90] and phi in (-90, 90].

        Theta is folded by its 180 degree period and its sign dropped, phi is
        reduced modulo 180. This identifies mirror poses: the result has the
        same orthographic silhouette as the input but is not always the same
        ring in 3D.
        """
        theta = abs(wrap_half_turn(self.theta))
        return Pose(theta, wrap_half_turn(self.phi), self.k, self.l, self.h)

    def validate(self, geom: "ScannerGeometry") -> None:
        if not 0.0 < self.h < geom.H:
            raise InvalidArgumentError(
                f"h must lie strictly between detector and source, got h={self.h} (H={geom.H})"
            )


@dataclass(frozen=True)
class ScannerGeometry:
    """Source-to-detector distance ``H`` (mm) and pixel pitch (mm/px)."""

    H: float = 1040.0
    pixel_pitch: float = 1.0

    def __post_init__(self) -> None:
        if not self.H > 0:
            raise InvalidArgumentError(f"H must be positive, got {self.H}")
        if not self.pixel_pitch > 0:
            raise InvalidArgumentError(f"pixel_pitch must be positive, got {self.pixel_pitch}")


def canonical_landmarks(r: float, n: int) -> np.ndarray:
    """Ring of ``n`` rim points of radius ``r`` in the xz-plane, centered at the origin.

    At theta = 0 the ring is edge-on to the detector.
    """
    if n < MIN_LANDMARKS:
        raise InvalidArgumentError(f"need at least {MIN_LANDMARKS} landmarks, got {n}")
    if not r > 0:
        raise InvalidArgumentError(f"radius must be positive, got {r}")
    t = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([r * np.cos(t), np.zeros(n), r * np.sin(t)])


def rotation_matrix(theta: float, phi: float) -> np.ndarray:
    """R = Rz(phi) @ Rx(theta); theta is applied first."""
    t = math.radians(theta)
    p = math.radians(phi)
    ct, st = math.cos(t), math.sin(t)
    cp, sp = math.cos(p), math.sin(p)
    rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ct, -st], [0.0, st, ct]])
    return rz @ rx


def apply_pose(landmarks: np.ndarray, pose: Pose, *, about_origin: bool = False) -> np.ndarray:
    """Rotate the ring about its center, then move the center to (k, l, h).

    With ``about_origin=True`` the ring is first lifted to height ``h`` and
    the rotation is applied about the world origin instead; the translation
    then only contributes (k, l).
    """
    pts = np.asarray(landmarks, dtype=float)
    rot = rotation_matrix(pose.theta, pose.phi)
    if about_origin:
        lifted = pts + np.array([0.0, 0.0, pose.h])
        return lifted @ rot.T + np.array([pose.k, pose.l, 0.0])
    return pts @ rot.T + np.array([pose.k, pose.l, pose.h])


def project_perspective(points: np.ndarray, geom: ScannerGeometry) -> np.ndarray:
    """Cone-beam projection onto the detector: (x, y) * H / (H - z)."""
    pts = np.asarray(points, dtype=float)
    depth = geom.H - pts[:, 2]
    if np.any(depth <= 0.0):
        raise DegenerateProjectionError("point at or above the source plane (z >= H)")
    mag = geom.H / depth
    return pts[:, :2] * mag[:, None]


def project_orthographic(points: np.ndarray) -> np.ndarray:
    """Parallel projection along z."""
    return np.asarray(points, dtype=float)[:, :2].copy()
