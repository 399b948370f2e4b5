"""Compiled per-sample propagation and IMU update used by :class:`~mimu.filter.MultiImuFilter`.

These mirror :func:`mimu.propagation.propagate` (one step) and
:func:`mimu.imu_update.ekf_update` on a flat nominal vector::

    body  p(3) v(3) a(3) q(4) w(3) alpha(3)         -> 19 entries
    IMU i p_BI(3) q_BI(4) b_a(3) b_w(3)             -> 13 entries each, from 19 + 13 i

The error-state layout and covariance are the same as in :mod:`mimu.state`.
``tests/test_filter.py`` checks them against the pure numpy path.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NOM_BODY = 19
NOM_IMU = 13

OK, GATED, NOT_PD, NON_FINITE = 0, 1, 2, 3


@njit(cache=True)
def _skew(v):
    out = np.zeros((3, 3))
    out[0, 1], out[0, 2] = -v[2], v[1]
    out[1, 0], out[1, 2] = v[2], -v[0]
    out[2, 0], out[2, 1] = -v[1], v[0]
    return out


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _canonical(q):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if q[0] < 0.0:
        n = -n
    return q / n


@njit(cache=True)
def _qmul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return _canonical(out)


@njit(cache=True)
def _qexp(th):
    a2 = th[0] * th[0] + th[1] * th[1] + th[2] * th[2]
    angle = math.sqrt(a2)
    if angle < 1e-8:
        w, k = 1.0 - a2 / 8.0, 0.5 * (1.0 - a2 / 24.0)
    else:
        w, k = math.cos(0.5 * angle), math.sin(0.5 * angle) / angle
    out = np.empty(4)
    out[0], out[1], out[2], out[3] = w, k * th[0], k * th[1], k * th[2]
    return _canonical(out)


@njit(cache=True)
def _rot(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0], R[0, 1], R[0, 2] = 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)
    R[1, 0], R[1, 1], R[1, 2] = 2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)
    R[2, 0], R[2, 1], R[2, 2] = 2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)
    return R


@njit(cache=True)
def _right_jacobian(phi):
    K = _skew(phi)
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    if angle < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return np.eye(3) - (1.0 - math.cos(angle)) / angle**2 * K + (angle - math.sin(angle)) / angle**3 * (K @ K)


@njit(cache=True)
def predict(xn, P, dt, Qc, g, trapezoid):
    """Advance ``xn`` in place by ``dt`` and return the propagated covariance."""
    n = P.shape[0]
    p, v, a = xn[0:3].copy(), xn[3:6].copy(), xn[6:9].copy()
    q, w, al = xn[9:13].copy(), xn[13:16].copy(), xn[16:19].copy()

    F = np.eye(n)
    for k in range(3):
        F[k, 3 + k] = dt
        F[k, 6 + k] = 0.5 * dt * dt
        F[3 + k, 6 + k] = dt
        F[12 + k, 15 + k] = dt
    phi = (w + 0.5 * al * dt) * dt
    Jr = _right_jacobian(phi)
    dq = _qexp(phi)
    C = _rot(dq)
    for r in range(3):
        for c in range(3):
            F[9 + r, 9 + c] = C[c, r]
            F[9 + r, 12 + c] = Jr[r, c] * dt
            F[9 + r, 15 + c] = Jr[r, c] * 0.5 * dt * dt

    Q = Qc * dt
    if trapezoid:
        P_new = F @ (P + 0.5 * Q) @ F.T + 0.5 * Q
    else:
        P_new = F @ (P + Q) @ F.T
    P_new = 0.5 * (P_new + P_new.T)

    acc = a + g
    xn[0:3] = p + v * dt + 0.5 * acc * dt * dt
    xn[3:6] = v + acc * dt
    xn[9:13] = _qmul(q, dq)
    xn[13:16] = w + al * dt
    return P_new


@njit(cache=True)
def imu_residual_jacobian(xn, i, z, calibrating, pinned, n):
    """Residual ``z - h(x)`` and full-width Jacobian of IMU ``i``."""
    a, q, w, al = xn[6:9], xn[9:13], xn[13:16], xn[16:19]
    o = NOM_BODY + NOM_IMU * i
    pb, qb, ba, bw = xn[o : o + 3], xn[o + 3 : o + 7], xn[o + 7 : o + 10], xn[o + 10 : o + 13]
    CT = _rot(qb).T
    RT = _rot(q).T
    f_body = RT @ a
    wxp = _cross(w, pb)
    sensed = f_body + _cross(al, pb) + _cross(w, wxp)
    w_s = CT @ w

    r = np.empty(6)
    r[0:3] = z[0:3] - (CT @ sensed + ba)
    r[3:6] = z[3:6] - (w_s + bw)

    H = np.zeros((6, n))
    Sp = _skew(pb)
    Sw = _skew(w)
    H[0:3, 6:9] = CT @ RT
    H[0:3, 9:12] = CT @ _skew(f_body)
    H[0:3, 12:15] = CT @ (Sw @ Sp.T + _skew(wxp).T)
    H[0:3, 15:18] = CT @ Sp.T
    H[3:6, 12:15] = CT
    if calibrating:
        e = 18 + 12 * i
        if not pinned[i]:
            H[0:3, e : e + 3] = CT @ (_skew(al) + Sw @ Sw)
            H[0:3, e + 3 : e + 6] = _skew(CT @ sensed)
            H[3:6, e + 3 : e + 6] = _skew(w_s)
        for k in range(3):
            H[k, e + 6 + k] = 1.0
            H[3 + k, e + 9 + k] = 1.0
    return r, H


@njit(cache=True)
def _cholesky(S):
    m = S.shape[0]
    L = np.zeros((m, m))
    for j in range(m):
        d = S[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return L, False
        L[j, j] = math.sqrt(d)
        for r in range(j + 1, m):
            s = S[r, j]
            for k in range(j):
                s -= L[r, k] * L[j, k]
            L[r, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def _chol_solve(L, B):
    m, c = B.shape
    Y = np.empty((m, c))
    for col in range(c):
        for r in range(m):
            s = B[r, col]
            for k in range(r):
                s -= L[r, k] * Y[k, col]
            Y[r, col] = s / L[r, r]
        for r in range(m - 1, -1, -1):
            s = Y[r, col]
            for k in range(r + 1, m):
                s -= L[k, r] * Y[k, col]
            Y[r, col] = s / L[r, r]
    return Y


@njit(cache=True)
def inject(xn, dx, pinned):
    """Apply an error-state correction to ``xn`` in place."""
    for k in range(3):
        xn[k] += dx[k]
        xn[3 + k] += dx[3 + k]
        xn[6 + k] += dx[6 + k]
        xn[13 + k] += dx[12 + k]
        xn[16 + k] += dx[15 + k]
    xn[9:13] = _qmul(xn[9:13], _qexp(dx[9:12]))
    for i in range(pinned.shape[0]):
        o = NOM_BODY + NOM_IMU * i
        e = 18 + 12 * i
        if not pinned[i]:
            for k in range(3):
                xn[o + k] += dx[e + k]
            xn[o + 3 : o + 7] = _qmul(xn[o + 3 : o + 7], _qexp(dx[e + 3 : e + 6]))
        for k in range(3):
            xn[o + 7 + k] += dx[e + 6 + k]
            xn[o + 10 + k] += dx[e + 9 + k]


@njit(cache=True)
def imu_update(xn, P, i, z, R, calibrating, pinned, gate):
    """Fuse one IMU sample. Returns ``(status, P_new, d2, residual)``; ``xn`` is updated in place.

    ``gate <= 0`` disables gating.
    """
    n = P.shape[0]
    r, H = imu_residual_jacobian(xn, i, z, calibrating, pinned, n)
    PHt = P @ H.T
    S = H @ PHt + R
    L, ok = _cholesky(S)
    if not ok:
        return NOT_PD, P, np.nan, r
    B = np.empty((6, n + 1))
    B[:, :n] = PHt.T
    B[:, n] = r
    sol = _chol_solve(L, B)
    d2 = 0.0
    for k in range(6):
        d2 += r[k] * sol[k, n]
    if gate > 0.0 and d2 > gate:
        return GATED, P, d2, r
    K = sol[:, :n].T.copy()
    dx = K @ r
    for k in range(n):
        if not np.isfinite(dx[k]):
            return NON_FINITE, P, d2, r
    IKH = np.eye(n) - K @ H
    P_new = IKH @ P @ IKH.T + K @ R @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    inject(xn, dx, pinned)
    return OK, P_new, d2, r
