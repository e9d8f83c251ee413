"""Pose recovery by matching a modeled ellipse to the observed one.

The forward model (posed rim ring -> cone-beam projection -> ellipse fit)
is differentiated exactly in forward mode, so the loss gradient and the
residual Jacobian come out of a single kernel call.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._backend import kernels
from .ellipse import EllipseParams, fit_ellipse
from .errors import (
    DegenerateFitError,
    DegenerateProjectionError,
    ImplausibleGeometryError,
    InvalidArgumentError,
)
from .geometry import MIN_LANDMARKS, Pose, ScannerGeometry, wrap_half_turn

__all__ = [
    "RegistrationConfig",
    "RegistrationResult",
    "initial_guess",
    "forward_ellipse",
    "ellipse_residuals",
    "ellipse_loss",
    "pose_gradient",
    "register",
]

logger = logging.getLogger(__name__)

INIT_THETA = 25.0
INIT_PHI = 40.0
N_PARAMS = 5


@dataclass
class RegistrationConfig:
    """Optimizer settings.

    ``step_sizes`` scale the gradient per parameter (theta, phi, k, l, h);
    degrees and millimeters live on very different curvature scales. The
    ``gd`` optimizer rescales all of them by a common backtracking factor.
    ``h_bounds=None`` means (1 mm, H - 1 mm).
    """

    n_model_landmarks: int = 100
    max_iterations: int = 5000
    loss_tolerance: float = 1e-10
    step_tolerance: float = 1e-10
    step_sizes: tuple[float, ...] = (1.0, 1.0, 0.5, 0.5, 20.0)
    weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)
    theta_bounds: tuple[float, float] = (0.5, 89.5)
    phi_bounds: tuple[float, float] | None = None
    h_bounds: tuple[float, float] | None = None
    optimizer: str = "gd"
    seed: int = 0

    def __post_init__(self) -> None:
        self.step_sizes = tuple(float(s) for s in self.step_sizes)
        self.weights = tuple(float(w) for w in self.weights)
        self.theta_bounds = tuple(float(b) for b in self.theta_bounds)
        if self.phi_bounds is not None:
            self.phi_bounds = tuple(float(b) for b in self.phi_bounds)
        if self.h_bounds is not None:
            self.h_bounds = tuple(float(b) for b in self.h_bounds)
        self.validate()

    def validate(self) -> None:
        if self.n_model_landmarks < MIN_LANDMARKS:
            raise InvalidArgumentError(f"n_model_landmarks must be >= {MIN_LANDMARKS}")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if len(self.step_sizes) != N_PARAMS or min(self.step_sizes) <= 0:
            raise InvalidArgumentError("step_sizes must be 5 positive numbers")
        if len(self.weights) != N_PARAMS or min(self.weights) < 0:
            raise InvalidArgumentError("weights must be 5 non-negative numbers")
        if self.optimizer not in ("gd", "lm"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")
        for name in ("theta_bounds", "phi_bounds", "h_bounds"):
            b = getattr(self, name)
            if b is not None and not (len(b) == 2 and b[0] <= b[1]):
                raise InvalidArgumentError(f"{name} must be an interval (lo, hi)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RegistrationConfig":
        return cls(**data)


@dataclass
class RegistrationResult:
    pose: Pose
    final_loss: float
    loss_trace: list[float]
    iterations: int
    converged: bool
    observed_ellipse: EllipseParams
    fitted_ellipse: EllipseParams
    wall_time: float
    initial_pose: Pose | None = None
    stop_reason: str = ""
    extra: dict = field(default_factory=dict)


def initial_guess(observed: EllipseParams, r: float, geom: ScannerGeometry) -> Pose:
    """Starting pose from the observed ellipse.

    The ratio beta = r / a between implant radius and observed semi-major axis
    estimates the magnification. Inclination starts at +-40 degrees with the
    sign of the observed orientation.
    """
    if not observed.a > 0 or not r > 0:
        raise InvalidArgumentError("observed semi-major axis and radius must be positive")
    beta = r / observed.a
    if beta >= 1.0:
        raise ImplausibleGeometryError(
            f"projected semi-major axis {observed.a:.4g} mm does not exceed the implant radius {r:.4g} mm"
        )
    phi0 = INIT_PHI if observed.alpha >= 0.0 else -INIT_PHI
    return Pose(INIT_THETA, phi0, beta * observed.x, beta * observed.y, (1.0 - beta) * geom.H)


def forward_ellipse(pose: Pose, r: float, n: int, geom: ScannerGeometry) -> EllipseParams:
    """Ellipse fitted to the cone-beam projection of the posed rim ring."""
    pose.validate(geom)
    if not r > 0:
        raise InvalidArgumentError(f"radius must be positive, got {r}")
    if n < MIN_LANDMARKS:
        raise InvalidArgumentError(f"need at least {MIN_LANDMARKS} model landmarks, got {n}")
    params, _ = kernels.pose_ellipse(pose.as_array(), float(r), int(n), float(geom.H), False)
    return EllipseParams.from_array(params)


def ellipse_residuals(observed, estimated) -> np.ndarray:
    """Parameter differences estimated - observed, the angle wrapped into (-90, 90]."""
    obs = observed.as_array() if isinstance(observed, EllipseParams) else np.asarray(observed, float)
    est = estimated.as_array() if isinstance(estimated, EllipseParams) else np.asarray(estimated, float)
    res = est - obs
    res[4] = wrap_half_turn(res[4])
    return res


def ellipse_loss(observed: EllipseParams, estimated: EllipseParams, weights=None) -> float:
    """Weighted mean squared parameter difference; angles compared modulo 180."""
    w = np.ones(N_PARAMS) if weights is None else np.asarray(weights, dtype=float)
    res = ellipse_residuals(observed, estimated)
    return float(np.dot(w, res * res) / N_PARAMS)


class _Objective:
    """Loss, gradient and residual Jacobian at a pose vector."""

    def __init__(self, observed: EllipseParams, r: float, n: int, H: float, weights):
        self.obs = observed.as_array()
        self.r = float(r)
        self.n = int(n)
        self.H = float(H)
        self.w = np.asarray(weights, dtype=float)

    def __call__(self, p: np.ndarray):
        est, jac = kernels.pose_ellipse(p, self.r, self.n, self.H, True)
        res = est - self.obs
        res[4] = wrap_half_turn(res[4])
        wres = self.w * res
        loss = float(np.dot(wres, res) / N_PARAMS)
        grad = 2.0 / N_PARAMS * (jac.T @ wres)
        return loss, grad, res, jac, est


def pose_gradient(
    pose: Pose,
    observed: EllipseParams,
    r: float,
    n: int,
    geom: ScannerGeometry,
    weights=None,
) -> np.ndarray:
    """Exact gradient of the ellipse loss w.r.t. (theta_deg, phi_deg, k, l, h)."""
    pose.validate(geom)
    w = np.ones(N_PARAMS) if weights is None else weights
    _, grad, _, _, _ = _Objective(observed, r, n, geom.H, w)(pose.as_array())
    return grad


def _bounds(config: RegistrationConfig, geom: ScannerGeometry):
    lo = np.full(N_PARAMS, -np.inf)
    hi = np.full(N_PARAMS, np.inf)
    lo[0], hi[0] = config.theta_bounds
    if config.phi_bounds is not None:
        lo[1], hi[1] = config.phi_bounds
    lo[4], hi[4] = config.h_bounds if config.h_bounds is not None else (1.0, geom.H - 1.0)
    return lo, hi


_EVAL_ERRORS = (DegenerateFitError, DegenerateProjectionError)


def _gradient_descent(objective, p, lo, hi, config, trace):
    steps = np.asarray(config.step_sizes)
    loss, grad, _, _, est = objective(p)
    trace.append(loss)
    scale = 1.0
    reason = "max_iterations"
    it = 0
    while it < config.max_iterations:
        if loss < config.loss_tolerance:
            reason = "loss_tolerance"
            break
        direction = -steps * grad
        while True:
            q = np.clip(p + scale * direction, lo, hi)
            try:
                cand = objective(q)
            except _EVAL_ERRORS:
                cand = None
            # Armijo condition on the projected step
            if cand is not None and cand[0] <= loss + 1e-4 * float(np.dot(grad, q - p)):
                break
            scale *= 0.5
            if scale < 1e-14:
                return p, loss, est, it, "line_search_failed"
        step = float(np.max(np.abs(q - p)))
        p = q
        loss, grad, _, _, est = cand
        trace.append(loss)
        it += 1
        scale = min(scale * 2.0, 1e6)
        if step < config.step_tolerance:
            reason = "step_tolerance"
            break
    else:
        if loss < config.loss_tolerance:
            reason = "loss_tolerance"
    return p, loss, est, it, reason


def _levenberg_marquardt(objective, p, lo, hi, config, trace):
    w = np.asarray(config.weights)
    loss, grad, res, jac, est = objective(p)
    trace.append(loss)
    damping = 1e-3
    reason = "max_iterations"
    it = 0
    while it < config.max_iterations:
        if loss < config.loss_tolerance:
            reason = "loss_tolerance"
            break
        jtj = jac.T @ (w[:, None] * jac)
        rhs = -jac.T @ (w * res)
        while True:
            try:
                delta = np.linalg.solve(jtj + damping * np.diag(np.diag(jtj) + 1e-12), rhs)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                q = np.clip(p + delta, lo, hi)
                try:
                    cand = objective(q)
                except _EVAL_ERRORS:
                    cand = None
                if cand is not None and cand[0] < loss:
                    break
            damping *= 10.0
            if damping > 1e12:
                return p, loss, est, it, "line_search_failed"
        step = float(np.max(np.abs(q - p)))
        p = q
        loss, grad, res, jac, est = cand
        trace.append(loss)
        it += 1
        damping = max(damping * 0.1, 1e-12)
        if step < config.step_tolerance:
            reason = "step_tolerance"
            break
    else:
        if loss < config.loss_tolerance:
            reason = "loss_tolerance"
    return p, loss, est, it, reason


def register(
    observed_landmarks,
    r: float,
    geom: ScannerGeometry,
    config: RegistrationConfig | None = None,
    *,
    initial_pose: Pose | None = None,
) -> RegistrationResult:
    """Estimate the implant pose from detector-plane rim landmarks.

    Non-convergence is reported through ``converged=False``; the best pose
    found so far is still returned.
    """
    config = config or RegistrationConfig()
    start = time.perf_counter()
    observed = fit_ellipse(observed_landmarks)
    p0 = initial_pose if initial_pose is not None else initial_guess(observed, r, geom)
    lo, hi = _bounds(config, geom)
    p = np.clip(p0.as_array(), lo, hi)
    objective = _Objective(observed, r, config.n_model_landmarks, geom.H, config.weights)
    trace: list[float] = []
    solver = _gradient_descent if config.optimizer == "gd" else _levenberg_marquardt
    p, loss, est, iterations, reason = solver(objective, p, lo, hi, config, trace)
    converged = reason in ("loss_tolerance", "step_tolerance")
    if not math.isfinite(loss):
        converged = False
    logger.debug("register stopped after %d iterations (%s), loss=%.3e", iterations, reason, loss)
    return RegistrationResult(
        pose=Pose.from_array(p).normalized(),
        final_loss=loss,
        loss_trace=trace,
        iterations=iterations,
        converged=converged,
        observed_ellipse=observed,
        fitted_ellipse=EllipseParams.from_array(est),
        wall_time=time.perf_counter() - start,
        initial_pose=p0,
        stop_reason=reason,
    )
