"""Pure-NumPy hot kernels: ellipse fit and pose forward model with tangents.

Derivatives are propagated in forward mode. Every quantity ``q`` travels with
an array ``dq`` of shape ``(..., k)`` holding its directional derivatives
along ``k`` input directions. The compiled module ``_kernels`` implements the
same functions with identical signatures.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DegenerateConicError,
    DegenerateFitError,
    DegenerateGradientError,
    DegenerateProjectionError,
    NotAnEllipseError,
)

DEG = math.pi / 180.0
# smallest-eigenvalue gap, relative to the largest eigenvalue of the scatter matrix
GAP_TOL = 1e-9
# covariance det / trace^2 below which the landmarks count as collinear
ASPECT_TOL = 1e-9
# relative eigenvalue split below which the ellipse is treated as a circle
CIRCLE_TOL = 1e-12


def conic_to_standard(coef, dcoef=None):
    """Implicit conic (A..F) to (x, y, a, b, alpha_deg), with tangents.

    ``dcoef`` has shape (6, k); the returned tangent has shape (5, k).
    """
    A, B, C, D, E, F = (float(c) for c in coef)
    if dcoef is None:
        dcoef = np.zeros((6, 0))
    dA, dB, dC, dD, dE, dF = dcoef

    b2 = 0.5 * B
    db2 = 0.5 * dB
    disc = b2 * b2 - A * C
    if not disc < 0.0:
        raise NotAnEllipseError("conic discriminant B^2 - 4AC is not negative")
    den = 2.0 * disc
    dden = 2.0 * (2.0 * b2 * db2 - dA * C - A * dC)

    x = (C * D - b2 * E) / den
    dx = (dC * D + C * dD - db2 * E - b2 * dE - x * dden) / den
    y = (A * E - b2 * D) / den
    dy = (dA * E + A * dE - db2 * D - b2 * dD - y * dden) / den

    g = A * x * x + 2.0 * b2 * x * y + C * y * y - F
    if not (math.isfinite(g) and g > 0.0):
        raise DegenerateConicError("conic has no real points (mu <= 0)")
    dg = (
        dA * x * x
        + 2.0 * A * x * dx
        + 2.0 * (db2 * x * y + b2 * dx * y + b2 * x * dy)
        + dC * y * y
        + 2.0 * C * y * dy
        - dF
    )
    mu = 1.0 / g
    dmu = -dg * mu * mu

    m11, m12, m22 = mu * A, mu * b2, mu * C
    dm11 = dmu * A + mu * dA
    dm12 = dmu * b2 + mu * db2
    dm22 = dmu * C + mu * dC

    diff = m11 - m22
    ddiff = dm11 - dm22
    tr = m11 + m22
    dtr = dm11 + dm22
    root = math.sqrt(diff * diff + 4.0 * m12 * m12)
    circle = root <= CIRCLE_TOL * abs(tr)
    if circle:
        droot = np.zeros_like(dtr)
    else:
        droot = (diff * ddiff + 4.0 * m12 * dm12) / root

    lam_small = 0.5 * (tr - root)
    lam_large = 0.5 * (tr + root)
    if not lam_small > 0.0:
        raise DegenerateConicError("non-positive axis eigenvalue")
    # reciprocal square roots: the larger eigenvalue gives the minor axis
    a = 1.0 / math.sqrt(lam_small)
    b = 1.0 / math.sqrt(lam_large)
    da = -0.5 * a ** 3 * 0.5 * (dtr - droot)
    db = -0.5 * b ** 3 * 0.5 * (dtr + droot)

    if circle:
        alpha = 0.0
        dalpha = np.zeros_like(dtr)
    else:
        cma = C - A
        alpha = 0.5 * math.atan2(-B, cma) / DEG
        dalpha = 0.5 * (cma * -dB + B * (dC - dA)) / (cma * cma + B * B) / DEG

    params = np.array([x, y, a, b, alpha])
    return params, np.array([dx, dy, da, db, dalpha])


def _whiten(points, dpoints):
    """Centre the points and map them by the inverse square root of their covariance.

    In the whitened frame a thin ellipse becomes nearly a circle, which keeps
    the lifted design matrix and the conic coefficients well conditioned.
    """
    n = points.shape[0]
    m = points.mean(axis=0)
    dm = dpoints.mean(axis=0)  # (2, k)
    q = points - m
    dq = dpoints - dm
    qx, qy = q[:, 0], q[:, 1]
    sxx, sxy, syy = float(np.mean(qx * qx)), float(np.mean(qx * qy)), float(np.mean(qy * qy))
    tr = sxx + syy
    det = sxx * syy - sxy * sxy
    if not tr > 0.0:
        raise DegenerateFitError("landmarks collapse to a single location")
    if not det > ASPECT_TOL * tr * tr:
        cls = DegenerateGradientError if dpoints.shape[2] else DegenerateFitError
        raise cls("landmarks are nearly collinear")
    dsxx = 2.0 * np.einsum("i,ik->k", qx, dq[:, 0]) / n
    dsyy = 2.0 * np.einsum("i,ik->k", qy, dq[:, 1]) / n
    dsxy = (np.einsum("i,ik->k", qx, dq[:, 1]) + np.einsum("i,ik->k", qy, dq[:, 0])) / n

    # closed form for 2x2 SPD: sqrt(S) = (S + delta I) / tau
    delta = math.sqrt(det)
    tau = math.sqrt(tr + 2.0 * delta)
    ddelta = (dsxx * syy + sxx * dsyy - 2.0 * sxy * dsxy) / (2.0 * delta)
    dtau = (dsxx + dsyy + 2.0 * ddelta) / (2.0 * tau)
    W = np.array([[syy + delta, -sxy], [-sxy, sxx + delta]]) / (delta * tau)
    dW = np.array([[dsyy + ddelta, -dsxy], [-dsxy, dsxx + ddelta]]) / (delta * tau)
    dW -= W[:, :, None] * (ddelta / delta + dtau / tau)
    Winv = np.array([[sxx + delta, sxy], [sxy, syy + delta]]) / tau
    dWinv = np.array([[dsxx + ddelta, dsxy], [dsxy, dsyy + ddelta]]) / tau
    dWinv -= Winv[:, :, None] * (dtau / tau)

    p = q @ W
    dp = np.einsum("abk,ib->iak", dW, q) + np.einsum("ab,ibk->iak", W, dq)
    frame = (m, dm, W, dW, Winv, dWinv, delta, ddelta)
    return p, dp, frame


def _smallest_eigvec(p, dp, want_tangent):
    x, y = p[:, 0], p[:, 1]
    lift = np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])
    # singular vectors of the R factor instead of eigenvectors of lift^T lift:
    # same vectors, without squaring the condition number
    _, sig, vt = np.linalg.svd(np.linalg.qr(lift, mode="r"))
    lam = sig[::-1] ** 2
    vecs = vt[::-1].T
    if lam[1] - lam[0] <= GAP_TOL * abs(lam[-1]):
        cls = DegenerateGradientError if want_tangent else DegenerateFitError
        raise cls("scatter matrix has a near-degenerate null space")
    v = vecs[:, 0]
    if v[0] + v[2] < 0.0:
        v = -v

    dx, dy = dp[:, 0], dp[:, 1]
    k = dp.shape[2]
    if k == 0:
        return v, np.zeros((6, 0))
    dlift = np.empty((p.shape[0], 6, k))
    dlift[:, 0] = 2.0 * x[:, None] * dx
    dlift[:, 1] = x[:, None] * dy + y[:, None] * dx
    dlift[:, 2] = 2.0 * y[:, None] * dy
    dlift[:, 3] = dx
    dlift[:, 4] = dy
    dlift[:, 5] = 0.0
    resid = lift @ v
    dresid = np.einsum("ijk,j->ik", dlift, v)
    g = np.einsum("ijk,i->jk", dlift, resid) + lift.T @ dresid
    rest = vecs[:, 1:]
    coeff = (rest.T @ g) / (lam[0] - lam[1:])[:, None]
    return v, rest @ coeff


def _unwhiten(v, dv, frame):
    """Standard parameters in input coordinates from the whitened conic."""
    m, dm, W, dW, Winv, dWinv, delta, ddelta = frame
    A, B, C, D, E, F = (float(c) for c in v)
    dA, dB, dC, dD, dE, dF = dv

    den = 4.0 * A * C - B * B
    if not den > 0.0:
        raise NotAnEllipseError("conic discriminant B^2 - 4AC is not negative")
    dden = 4.0 * (dA * C + A * dC) - 2.0 * B * dB
    cx = (B * E - 2.0 * C * D) / den
    cy = (B * D - 2.0 * A * E) / den
    dcx = (dB * E + B * dE - 2.0 * (dC * D + C * dD) - cx * dden) / den
    dcy = (dB * D + B * dD - 2.0 * (dA * E + A * dE) - cy * dden) / den

    # level of the centred quadratic form: (p - c)^T Q (p - c) = kappa
    kappa = -0.5 * (D * cx + E * cy) - F
    if not (math.isfinite(kappa) and kappa > 0.0):
        raise DegenerateConicError("conic has no real points (mu <= 0)")
    dkappa = -0.5 * (dD * cx + D * dcx + dE * cy + E * dcy) - dF

    # the same quadratic form in centred input coordinates is W Q W
    Q = np.array([[A, 0.5 * B], [0.5 * B, C]])
    dQ = np.array([[dA, 0.5 * dB], [0.5 * dB, dC]])
    P = W @ Q @ W
    dP = (
        np.einsum("abk,bc,cd->adk", dW, Q, W)
        + np.einsum("ab,bck,cd->adk", W, dQ, W)
        + np.einsum("ab,bc,cdk->adk", W, Q, dW)
    )
    half_tr = 0.5 * (P[0, 0] + P[1, 1])
    dhalf_tr = 0.5 * (dP[0, 0] + dP[1, 1])
    hd = 0.5 * (P[0, 0] - P[1, 1])
    dhd = 0.5 * (dP[0, 0] - dP[1, 1])
    p12, dp12 = P[0, 1], dP[0, 1]
    root = math.hypot(hd, p12)
    circle = root <= CIRCLE_TOL * half_tr
    droot = np.zeros_like(dhalf_tr) if circle else (hd * dhd + p12 * dp12) / root

    # det(P) = det(Q) / det(S): exact product form, no cancellation
    detP = 0.25 * den / (delta * delta)
    ddetP = 0.25 * dden / (delta * delta) - 2.0 * detP * ddelta / delta
    lam_large = half_tr + root
    dlam_large = dhalf_tr + droot
    lam_small = detP / lam_large
    dlam_small = (ddetP - lam_small * dlam_large) / lam_large
    if not lam_small > 0.0:
        raise DegenerateConicError("non-positive axis eigenvalue")
    a = math.sqrt(kappa / lam_small)
    b = math.sqrt(kappa / lam_large)
    da = 0.5 * a * (dkappa / kappa - dlam_small / lam_small)
    db = 0.5 * b * (dkappa / kappa - dlam_large / lam_large)

    if circle:
        alpha = 0.0
        dalpha = np.zeros_like(dhalf_tr)
    else:
        alpha = 0.5 * math.atan2(-p12, -hd) / DEG
        dalpha = 0.5 * (hd * dp12 - p12 * dhd) / (root * root) / DEG

    c = np.array([cx, cy])
    dc = np.array([dcx, dcy])
    x, y = Winv @ c + m
    dxy = np.einsum("abk,b->ak", dWinv, c) + Winv @ dc + dm
    params = np.array([x, y, a, b, alpha])
    dparams = np.vstack([dxy, da, db, dalpha])

    # implicit conic in input coordinates, shifted back by the centroid
    g = W @ np.array([D, E])
    lin = g - 2.0 * P @ m
    conic = np.array([P[0, 0], 2.0 * P[0, 1], P[1, 1], lin[0], lin[1], m @ P @ m - g @ m + F])
    conic /= np.linalg.norm(conic)
    return params, dparams, conic


def fit_points(points, dpoints=None):
    """Fit an ellipse to 2D points.

    Returns ``(params, dparams, conic)``: standard parameters (x, y, a, b,
    alpha_deg), their tangents of shape (5, k) along ``dpoints`` (n, 2, k),
    and the unit-norm implicit conic in the input coordinates.
    """
    points = np.asarray(points, dtype=float)
    want_tangent = dpoints is not None
    if dpoints is None:
        dpoints = np.zeros(points.shape + (0,))
    p, dp, frame = _whiten(points, np.asarray(dpoints, dtype=float))
    v, dv = _smallest_eigvec(p, dp, want_tangent)
    return _unwhiten(v, dv, frame)


def pose_points(pose, r, n, H, want_tangent=True):
    """Project the posed rim ring; returns (points (n,2), tangents (n,2,5))."""
    theta, phi, k, l, h = pose  # noqa: E741
    ct, st = math.cos(theta * DEG), math.sin(theta * DEG)
    cp, sp = math.cos(phi * DEG), math.sin(phi * DEG)
    t = 2.0 * math.pi * np.arange(n) / n
    rc = r * np.cos(t)
    rs = r * np.sin(t)
    X = cp * rc + sp * st * rs + k
    Y = sp * rc - cp * st * rs + l
    Z = ct * rs + h
    depth = H - Z
    if np.any(depth <= 0.0):
        raise DegenerateProjectionError("point at or above the source plane (z >= H)")
    w = H / depth
    pts = np.column_stack([X * w, Y * w])
    if not want_tangent:
        return pts, None

    dX = np.zeros((n, 5))
    dY = np.zeros((n, 5))
    dZ = np.zeros((n, 5))
    dX[:, 0] = sp * ct * rs * DEG
    dY[:, 0] = -cp * ct * rs * DEG
    dZ[:, 0] = -st * rs * DEG
    dX[:, 1] = -(Y - l) * DEG
    dY[:, 1] = (X - k) * DEG
    dX[:, 2] = 1.0
    dY[:, 3] = 1.0
    dZ[:, 4] = 1.0
    dw = (w * w / H)[:, None] * dZ
    dpts = np.empty((n, 2, 5))
    dpts[:, 0] = dX * w[:, None] + X[:, None] * dw
    dpts[:, 1] = dY * w[:, None] + Y[:, None] * dw
    return pts, dpts


def pose_ellipse(pose, r, n, H, want_jacobian=True):
    """Forward model: pose -> projected ellipse, with the 5x5 Jacobian.

    Jacobian rows follow (x, y, a, b, alpha_deg); columns follow
    (theta_deg, phi_deg, k, l, h).
    """
    pts, dpts = pose_points(pose, r, n, H, want_jacobian)
    params, dparams, _ = fit_points(pts, dpts)
    return params, (dparams if want_jacobian else None)
