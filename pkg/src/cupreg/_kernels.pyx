# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, atan2, fabs, hypot, isfinite, M_PI
from scipy.linalg.cython_lapack cimport dgesvd

from .errors import (
    DegenerateConicError,
    DegenerateFitError,
    DegenerateGradientError,
    DegenerateProjectionError,
    NotAnEllipseError,
)

cnp.import_array()

cdef enum:
    NCOEF = 6

cdef double DEG = M_PI / 180.0
GAP_TOL = 1e-9
CIRCLE_TOL = 1e-12
cdef double _GAP_TOL = 1e-9
cdef double _CIRCLE_TOL = 1e-12
ASPECT_TOL = 1e-9
cdef double _ASPECT_TOL = 1e-9

# status codes returned by the nogil cores
cdef enum:
    OK = 0
    ERR_NOT_ELLIPSE = 1
    ERR_CONIC = 2
    ERR_AXIS = 3
    ERR_GAP = 4
    ERR_COLLAPSE = 5
    ERR_LAPACK = 6
    ERR_PROJECTION = 7
    ERR_ASPECT = 8


cdef void _raise(int status, bint tangent) except *:
    if status == ERR_NOT_ELLIPSE:
        raise NotAnEllipseError("conic discriminant B^2 - 4AC is not negative")
    if status == ERR_CONIC:
        raise DegenerateConicError("conic has no real points (mu <= 0)")
    if status == ERR_AXIS:
        raise DegenerateConicError("non-positive axis eigenvalue")
    if status == ERR_GAP:
        if tangent:
            raise DegenerateGradientError("scatter matrix has a near-degenerate null space")
        raise DegenerateFitError("scatter matrix has a near-degenerate null space")
    if status == ERR_ASPECT:
        if tangent:
            raise DegenerateGradientError("landmarks are nearly collinear")
        raise DegenerateFitError("landmarks are nearly collinear")
    if status == ERR_COLLAPSE:
        raise DegenerateFitError("landmarks collapse to a single location")
    if status == ERR_LAPACK:
        raise DegenerateFitError("eigen-decomposition failed")
    if status == ERR_PROJECTION:
        raise DegenerateProjectionError("point at or above the source plane (z >= H)")


cdef int _conic_to_standard(const double* c, const double* dc, int k,
                            double* out, double* dout) noexcept nogil:
    """dc is (6, k) row-major, dout is (5, k) row-major."""
    cdef double A = c[0], B = c[1], C = c[2], D = c[3], E = c[4], F = c[5]
    cdef double b2 = 0.5 * B
    cdef double disc = b2 * b2 - A * C
    if not disc < 0.0:
        return ERR_NOT_ELLIPSE
    cdef double den = 2.0 * disc
    cdef double x = (C * D - b2 * E) / den
    cdef double y = (A * E - b2 * D) / den
    cdef double g = A * x * x + 2.0 * b2 * x * y + C * y * y - F
    if not (isfinite(g) and g > 0.0):
        return ERR_CONIC
    cdef double mu = 1.0 / g
    cdef double m11 = mu * A, m12 = mu * b2, m22 = mu * C
    cdef double diff = m11 - m22, tr = m11 + m22
    cdef double root = sqrt(diff * diff + 4.0 * m12 * m12)
    cdef bint circle = root <= _CIRCLE_TOL * fabs(tr)
    cdef double lam_small = 0.5 * (tr - root)
    cdef double lam_large = 0.5 * (tr + root)
    if not lam_small > 0.0:
        return ERR_AXIS
    cdef double a = 1.0 / sqrt(lam_small)
    cdef double b = 1.0 / sqrt(lam_large)
    cdef double cma = C - A
    cdef double alpha = 0.0
    if not circle:
        alpha = 0.5 * atan2(-B, cma) / DEG
    out[0] = x
    out[1] = y
    out[2] = a
    out[3] = b
    out[4] = alpha

    cdef int j
    cdef double dA, dB, dC, dD, dE, dF, db2, dden, dx, dy, dg, dmu
    cdef double dm11, dm12, dm22, ddiff, dtr, droot
    cdef double a3 = a * a * a, b3 = b * b * b
    cdef double ang_den = cma * cma + B * B
    for j in range(k):
        dA = dc[0 * k + j]
        dB = dc[1 * k + j]
        dC = dc[2 * k + j]
        dD = dc[3 * k + j]
        dE = dc[4 * k + j]
        dF = dc[5 * k + j]
        db2 = 0.5 * dB
        dden = 2.0 * (2.0 * b2 * db2 - dA * C - A * dC)
        dx = (dC * D + C * dD - db2 * E - b2 * dE - x * dden) / den
        dy = (dA * E + A * dE - db2 * D - b2 * dD - y * dden) / den
        dg = (dA * x * x + 2.0 * A * x * dx
              + 2.0 * (db2 * x * y + b2 * dx * y + b2 * x * dy)
              + dC * y * y + 2.0 * C * y * dy - dF)
        dmu = -dg * mu * mu
        dm11 = dmu * A + mu * dA
        dm12 = dmu * b2 + mu * db2
        dm22 = dmu * C + mu * dC
        ddiff = dm11 - dm22
        dtr = dm11 + dm22
        if circle:
            droot = 0.0
        else:
            droot = (diff * ddiff + 4.0 * m12 * dm12) / root
        dout[0 * k + j] = dx
        dout[1 * k + j] = dy
        dout[2 * k + j] = -0.25 * a3 * (dtr - droot)
        dout[3 * k + j] = -0.25 * b3 * (dtr + droot)
        if circle:
            dout[4 * k + j] = 0.0
        else:
            dout[4 * k + j] = 0.5 * (cma * -dB + B * (dC - dA)) / ang_den / DEG
    return OK


cdef inline void _mul2(const double* X, const double* Y, double* out) noexcept nogil:
    """2x2 row-major product."""
    out[0] = X[0] * Y[0] + X[1] * Y[2]
    out[1] = X[0] * Y[1] + X[1] * Y[3]
    out[2] = X[2] * Y[0] + X[3] * Y[2]
    out[3] = X[2] * Y[1] + X[3] * Y[3]


cdef int _fit_core(const double* pts, const double* dpts, int n, int k,
                   double* params, double* dparams, double* conic,
                   double* work_p, double* work_dp, double* dv) noexcept nogil:
    """pts (n, 2); dpts (n, 2, k); work_p (n, 2); work_dp (n, 2, k); dv (6, k)."""
    cdef int i, j, a, b, info
    cdef double mx = 0.0, my = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0, qx, qy
    for i in range(n):
        mx += pts[2 * i]
        my += pts[2 * i + 1]
    mx /= n
    my /= n
    for i in range(n):
        qx = pts[2 * i] - mx
        qy = pts[2 * i + 1] - my
        sxx += qx * qx
        sxy += qx * qy
        syy += qy * qy
    sxx /= n
    sxy /= n
    syy /= n
    cdef double trS = sxx + syy, detS = sxx * syy - sxy * sxy
    if not trS > 0.0:
        return ERR_COLLAPSE
    if not detS > _ASPECT_TOL * trS * trS:
        return ERR_ASPECT

    # whitening by S^(-1/2), closed form for 2x2 SPD: sqrt(S) = (S + delta I) / tau
    cdef double delta = sqrt(detS)
    cdef double tau = sqrt(trS + 2.0 * delta)
    cdef double W[4]
    cdef double Winv[4]
    W[0] = (syy + delta) / (delta * tau)
    W[1] = -sxy / (delta * tau)
    W[2] = W[1]
    W[3] = (sxx + delta) / (delta * tau)
    Winv[0] = (sxx + delta) / tau
    Winv[1] = sxy / tau
    Winv[2] = Winv[1]
    Winv[3] = (syy + delta) / tau
    for i in range(n):
        qx = pts[2 * i] - mx
        qy = pts[2 * i + 1] - my
        work_p[2 * i] = W[0] * qx + W[1] * qy
        work_p[2 * i + 1] = W[2] * qx + W[3] * qy

    # R factor of the lifted design matrix, built row by row with Givens
    # rotations; its right singular vectors are the scatter eigenvectors
    cdef double R[NCOEF * NCOEF]
    cdef double row[NCOEF]
    cdef double x, y, c, s, t, rr
    for a in range(NCOEF * NCOEF):
        R[a] = 0.0
    for i in range(n):
        x = work_p[2 * i]
        y = work_p[2 * i + 1]
        row[0] = x * x
        row[1] = x * y
        row[2] = y * y
        row[3] = x
        row[4] = y
        row[5] = 1.0
        for a in range(NCOEF):
            if row[a] == 0.0:
                continue
            rr = hypot(R[a * NCOEF + a], row[a])
            c = R[a * NCOEF + a] / rr
            s = row[a] / rr
            R[a * NCOEF + a] = rr
            for b in range(a + 1, NCOEF):
                t = c * R[a * NCOEF + b] + s * row[b]
                row[b] = c * row[b] - s * R[a * NCOEF + b]
                R[a * NCOEF + b] = t

    # LAPACK reads the row-major R as R^T, whose left singular vectors are
    # the right singular vectors of R
    cdef double sig[NCOEF]
    cdef double U[NCOEF * NCOEF]
    cdef double vt_dummy[1]
    cdef double work[256]
    cdef int nn = NCOEF, one = 1, lwork = 256
    cdef char jobu = b'A', jobvt = b'N'
    dgesvd(&jobu, &jobvt, &nn, &nn, R, &nn, sig, U, &nn, vt_dummy, &one, work, &lwork, &info)
    if info != 0:
        return ERR_LAPACK
    # ascending eigen-pairs of the scatter matrix: E[b*6 : b*6+6] is vector b
    cdef double lam[NCOEF]
    cdef double E[NCOEF * NCOEF]
    for b in range(NCOEF):
        lam[b] = sig[NCOEF - 1 - b] * sig[NCOEF - 1 - b]
        for a in range(NCOEF):
            E[b * NCOEF + a] = U[(NCOEF - 1 - b) * NCOEF + a]
    if lam[1] - lam[0] <= _GAP_TOL * fabs(lam[NCOEF - 1]):
        return ERR_GAP
    cdef double v[NCOEF]
    cdef double sgn = 1.0
    if E[0] + E[2] < 0.0:
        sgn = -1.0
    for a in range(NCOEF):
        v[a] = sgn * E[a]

    # back to input coordinates
    cdef double A = v[0], B = v[1], C = v[2], D = v[3], Ev = v[4], F = v[5]
    cdef double den = 4.0 * A * C - B * B
    if not den > 0.0:
        return ERR_NOT_ELLIPSE
    cdef double cx = (B * Ev - 2.0 * C * D) / den
    cdef double cy = (B * D - 2.0 * A * Ev) / den
    # level of the centred quadratic form: (p - c)^T Q (p - c) = kappa
    cdef double kappa = -0.5 * (D * cx + Ev * cy) - F
    if not (isfinite(kappa) and kappa > 0.0):
        return ERR_CONIC
    # the same quadratic form in centred input coordinates is W Q W
    cdef double Q[4]
    cdef double P[4]
    cdef double T1[4]
    cdef double T2[4]
    cdef double T3[4]
    Q[0] = A
    Q[1] = 0.5 * B
    Q[2] = Q[1]
    Q[3] = C
    _mul2(Q, W, T1)
    _mul2(W, T1, P)
    cdef double half_tr = 0.5 * (P[0] + P[3]), hd = 0.5 * (P[0] - P[3]), p12 = P[1]
    cdef double root = hypot(hd, p12)
    cdef bint circle = root <= _CIRCLE_TOL * half_tr
    # det(P) = det(Q) / det(S): exact product form, no cancellation
    cdef double detP = 0.25 * den / (delta * delta)
    cdef double lam_large = half_tr + root
    cdef double lam_small = detP / lam_large
    if not lam_small > 0.0:
        return ERR_AXIS
    cdef double ax = sqrt(kappa / lam_small)
    cdef double bx = sqrt(kappa / lam_large)
    params[0] = Winv[0] * cx + Winv[1] * cy + mx
    params[1] = Winv[2] * cx + Winv[3] * cy + my
    params[2] = ax
    params[3] = bx
    params[4] = 0.0 if circle else 0.5 * atan2(-p12, -hd) / DEG

    # tangents, one input direction at a time
    cdef double dmx, dmy, dsxx, dsxy, dsyy, ddelta, dtau, dqx, dqy
    cdef double dW[4]
    cdef double dWinv[4]
    cdef double dQ[4]
    cdef double dP[4]
    cdef double dlift[NCOEF]
    cdef double g[NCOEF]
    cdef double resid, dresid, proj
    cdef double dA, dB, dC, dD, dE, dF, dden, dcx, dcy, dkappa
    cdef double dhalf_tr, dhd, droot, ddetP, dlam_large, dlam_small
    for j in range(k):
        dmx = 0.0
        dmy = 0.0
        for i in range(n):
            dmx += dpts[(2 * i) * k + j]
            dmy += dpts[(2 * i + 1) * k + j]
        dmx /= n
        dmy /= n
        dsxx = 0.0
        dsxy = 0.0
        dsyy = 0.0
        for i in range(n):
            qx = pts[2 * i] - mx
            qy = pts[2 * i + 1] - my
            dqx = dpts[(2 * i) * k + j] - dmx
            dqy = dpts[(2 * i + 1) * k + j] - dmy
            dsxx += 2.0 * qx * dqx
            dsxy += qx * dqy + qy * dqx
            dsyy += 2.0 * qy * dqy
        dsxx /= n
        dsxy /= n
        dsyy /= n
        ddelta = (dsxx * syy + sxx * dsyy - 2.0 * sxy * dsxy) / (2.0 * delta)
        dtau = (dsxx + dsyy + 2.0 * ddelta) / (2.0 * tau)
        t = ddelta / delta + dtau / tau
        dW[0] = (dsyy + ddelta) / (delta * tau) - W[0] * t
        dW[1] = -dsxy / (delta * tau) - W[1] * t
        dW[2] = dW[1]
        dW[3] = (dsxx + ddelta) / (delta * tau) - W[3] * t
        dWinv[0] = (dsxx + ddelta) / tau - Winv[0] * dtau / tau
        dWinv[1] = dsxy / tau - Winv[1] * dtau / tau
        dWinv[2] = dWinv[1]
        dWinv[3] = (dsyy + ddelta) / tau - Winv[3] * dtau / tau

        # g = dM v over the whitened points
        for a in range(NCOEF):
            g[a] = 0.0
        for i in range(n):
            qx = pts[2 * i] - mx
            qy = pts[2 * i + 1] - my
            dqx = dpts[(2 * i) * k + j] - dmx
            dqy = dpts[(2 * i + 1) * k + j] - dmy
            x = work_p[2 * i]
            y = work_p[2 * i + 1]
            c = dW[0] * qx + dW[1] * qy + W[0] * dqx + W[1] * dqy
            s = dW[2] * qx + dW[3] * qy + W[2] * dqx + W[3] * dqy
            row[0] = x * x
            row[1] = x * y
            row[2] = y * y
            row[3] = x
            row[4] = y
            row[5] = 1.0
            dlift[0] = 2.0 * x * c
            dlift[1] = x * s + y * c
            dlift[2] = 2.0 * y * s
            dlift[3] = c
            dlift[4] = s
            dlift[5] = 0.0
            resid = 0.0
            dresid = 0.0
            for a in range(NCOEF):
                resid += row[a] * v[a]
                dresid += dlift[a] * v[a]
            for a in range(NCOEF):
                g[a] += dlift[a] * resid + row[a] * dresid
        # dv = sum_b V_b (V_b . g) / (lam0 - lam_b)
        for a in range(NCOEF):
            dv[a * k + j] = 0.0
        for b in range(1, NCOEF):
            proj = 0.0
            for a in range(NCOEF):
                proj += E[b * NCOEF + a] * g[a]
            proj /= lam[0] - lam[b]
            for a in range(NCOEF):
                dv[a * k + j] += proj * E[b * NCOEF + a]

        dA = dv[0 * k + j]
        dB = dv[1 * k + j]
        dC = dv[2 * k + j]
        dD = dv[3 * k + j]
        dE = dv[4 * k + j]
        dF = dv[5 * k + j]
        dden = 4.0 * (dA * C + A * dC) - 2.0 * B * dB
        dcx = (dB * Ev + B * dE - 2.0 * (dC * D + C * dD) - cx * dden) / den
        dcy = (dB * D + B * dD - 2.0 * (dA * Ev + A * dE) - cy * dden) / den
        dkappa = -0.5 * (dD * cx + D * dcx + dE * cy + Ev * dcy) - dF
        dQ[0] = dA
        dQ[1] = 0.5 * dB
        dQ[2] = dQ[1]
        dQ[3] = dC
        # dP = dW Q W + W dQ W + W Q dW
        _mul2(dW, T1, dP)
        _mul2(dQ, W, T2)
        _mul2(W, T2, T3)
        for a in range(4):
            dP[a] += T3[a]
        _mul2(Q, dW, T2)
        _mul2(W, T2, T3)
        for a in range(4):
            dP[a] += T3[a]
        dhalf_tr = 0.5 * (dP[0] + dP[3])
        dhd = 0.5 * (dP[0] - dP[3])
        droot = 0.0 if circle else (hd * dhd + p12 * dP[1]) / root
        ddetP = 0.25 * dden / (delta * delta) - 2.0 * detP * ddelta / delta
        dlam_large = dhalf_tr + droot
        dlam_small = (ddetP - lam_small * dlam_large) / lam_large

        dparams[0 * k + j] = dWinv[0] * cx + dWinv[1] * cy + Winv[0] * dcx + Winv[1] * dcy + dmx
        dparams[1 * k + j] = dWinv[2] * cx + dWinv[3] * cy + Winv[2] * dcx + Winv[3] * dcy + dmy
        dparams[2 * k + j] = 0.5 * ax * (dkappa / kappa - dlam_small / lam_small)
        dparams[3 * k + j] = 0.5 * bx * (dkappa / kappa - dlam_large / lam_large)
        if circle:
            dparams[4 * k + j] = 0.0
        else:
            dparams[4 * k + j] = 0.5 * (hd * dP[1] - p12 * dhd) / (root * root) / DEG

    # conic in input coordinates, unit norm, A + C > 0
    cdef double gx = W[0] * D + W[1] * Ev, gy = W[2] * D + W[3] * Ev, nrm = 0.0
    conic[0] = P[0]
    conic[1] = 2.0 * P[1]
    conic[2] = P[3]
    conic[3] = gx - 2.0 * (P[0] * mx + P[1] * my)
    conic[4] = gy - 2.0 * (P[2] * mx + P[3] * my)
    conic[5] = P[0] * mx * mx + 2.0 * P[1] * mx * my + P[3] * my * my - gx * mx - gy * my + F
    for a in range(NCOEF):
        nrm += conic[a] * conic[a]
    nrm = sqrt(nrm)
    for a in range(NCOEF):
        conic[a] /= nrm
    return OK


def conic_to_standard(coef, dcoef=None):
    cdef double[::1] c = np.ascontiguousarray(coef, dtype=np.float64)
    cdef int k = 0
    if dcoef is not None:
        dcoef = np.ascontiguousarray(dcoef, dtype=np.float64)
        k = dcoef.shape[1]
    else:
        dcoef = np.zeros((6, 0))
    cdef double[:, ::1] dc = dcoef
    out = np.empty(5)
    dout = np.empty((5, k))
    cdef double[::1] o = out
    cdef double[:, ::1] do = dout
    cdef double dummy = 0.0
    cdef int status = _conic_to_standard(&c[0], &dc[0, 0] if k > 0 else &dummy, k,
                                         &o[0], &do[0, 0] if k > 0 else &dummy)
    if status != OK:
        _raise(status, False)
    return out, dout


def fit_points(points, dpoints=None):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef int n = pts.shape[0]
    cdef bint tangent = dpoints is not None
    cdef int k = 0
    if tangent:
        dpoints = np.ascontiguousarray(dpoints, dtype=np.float64)
        k = dpoints.shape[2]
    kk = max(k, 1)
    cdef double[:, :, ::1] dp = dpoints if k > 0 else np.zeros((n, 2, 1))
    params = np.empty(5)
    dparams = np.empty((5, kk))
    conic = np.empty(6)
    cdef double[::1] pv = params
    cdef double[:, ::1] dpv = dparams
    cdef double[::1] cv = conic
    cdef double[:, ::1] work_p = np.empty((n, 2))
    cdef double[:, :, ::1] work_dp = np.empty((n if n > 3 else 3, 2, kk))
    cdef double[:, ::1] dv = np.empty((6, kk))
    cdef int status
    with nogil:
        status = _fit_core(&pts[0, 0], &dp[0, 0, 0], n, k, &pv[0], &dpv[0, 0], &cv[0],
                           &work_p[0, 0], &work_dp[0, 0, 0], &dv[0, 0])
    if status != OK:
        _raise(status, tangent)
    return params, dparams[:, :k], conic


cdef int _pose_points(const double* pose, double r, int n, double H, bint tangent,
                      double* pts, double* dpts) noexcept nogil:
    cdef double ct = cos(pose[0] * DEG), st = sin(pose[0] * DEG)
    cdef double cp = cos(pose[1] * DEG), sp = sin(pose[1] * DEG)
    cdef double k = pose[2], l = pose[3], h = pose[4]
    cdef int i, j
    cdef double t, rc, rs, X, Y, Z, w, coef
    cdef double dX[5]
    cdef double dY[5]
    cdef double dZ[5]
    for i in range(n):
        t = 2.0 * M_PI * i / n
        rc = r * cos(t)
        rs = r * sin(t)
        X = cp * rc + sp * st * rs + k
        Y = sp * rc - cp * st * rs + l
        Z = ct * rs + h
        if not H - Z > 0.0:
            return ERR_PROJECTION
        w = H / (H - Z)
        pts[2 * i] = X * w
        pts[2 * i + 1] = Y * w
        if not tangent:
            continue
        dX[0] = sp * ct * rs * DEG
        dY[0] = -cp * ct * rs * DEG
        dZ[0] = -st * rs * DEG
        dX[1] = -(Y - l) * DEG
        dY[1] = (X - k) * DEG
        dZ[1] = 0.0
        dX[2] = 1.0
        dY[2] = 0.0
        dZ[2] = 0.0
        dX[3] = 0.0
        dY[3] = 1.0
        dZ[3] = 0.0
        dX[4] = 0.0
        dY[4] = 0.0
        dZ[4] = 1.0
        coef = w * w / H
        for j in range(5):
            dpts[(2 * i) * 5 + j] = dX[j] * w + X * coef * dZ[j]
            dpts[(2 * i + 1) * 5 + j] = dY[j] * w + Y * coef * dZ[j]
    return OK


def pose_points(pose, double r, int n, double H, want_tangent=True):
    cdef double[::1] pv = np.ascontiguousarray(pose, dtype=np.float64)
    pts = np.empty((n, 2))
    dpts = np.empty((n, 2, 5))
    cdef double[:, ::1] p = pts
    cdef double[:, :, ::1] dp = dpts
    cdef bint tangent = bool(want_tangent)
    cdef int status
    with nogil:
        status = _pose_points(&pv[0], r, n, H, tangent, &p[0, 0], &dp[0, 0, 0])
    if status != OK:
        _raise(status, False)
    return pts, (dpts if tangent else None)


def pose_ellipse(pose, double r, int n, double H, want_jacobian=True):
    cdef double[::1] pv = np.ascontiguousarray(pose, dtype=np.float64)
    cdef bint tangent = bool(want_jacobian)
    cdef int k = 5 if tangent else 0
    cdef double[:, ::1] pts = np.empty((n, 2))
    cdef double[:, :, ::1] dpts = np.empty((n, 2, 5))
    cdef double[:, ::1] work_p = np.empty((n, 2))
    cdef double[:, :, ::1] work_dp = np.empty((n, 2, 5))
    cdef double[:, ::1] dv = np.empty((6, 5))
    params = np.empty(5)
    jac = np.empty((5, 5))
    cdef double[::1] out = params
    cdef double[:, ::1] dout = jac
    cdef double conic[6]
    cdef int status
    with nogil:
        status = _pose_points(&pv[0], r, n, H, tangent, &pts[0, 0], &dpts[0, 0, 0])
        if status == OK:
            status = _fit_core(&pts[0, 0], &dpts[0, 0, 0], n, k, &out[0], &dout[0, 0], conic,
                               &work_p[0, 0], &work_dp[0, 0, 0], &dv[0, 0])
    if status != OK:
        _raise(status, tangent)
    return params, (jac if tangent else None)
