"""IMU measurement model and EKF update.

Every IMU sample is used as a filter update. IMU ``i`` senses::

    a_m = C(q_BI)^T (C(q_GB)^T a + alpha x p_BI + w x (w x p_BI)) + b_a
    w_m = C(q_BI)^T w + b_w
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .propagation import propagate
from .so3 import cross, quat_to_rot, skew
from .state import AL, BODY_DIM, A, TH, W, imu_offset, inject_error, symmetrize

log = logging.getLogger(__name__)

CHI2_95_6DOF = 12.591587243743977


class FilterDivergence(RuntimeError):
    """The innovation covariance could not be factorised or the state went non-finite."""


@dataclass
class ImuSample:
    t: float
    accel: np.ndarray
    gyro: np.ndarray
    imu_id: int
    R: np.ndarray

    @property
    def z(self):
        return np.concatenate((self.accel, self.gyro))


def _check_index(x, i):
    if not 0 <= i < x.n_imus:
        raise IndexError(f"IMU index {i} out of range for {x.n_imus} IMUs")


def predict_imu_measurement(x, i):
    """Predicted ``(a_m, w_m)`` of IMU ``i``."""
    _check_index(x, i)
    b, cal = x.body, x.imus[i]
    C_bi = quat_to_rot(cal.q)
    f_body = quat_to_rot(b.q).T @ b.a
    lever = cross(b.alpha, cal.p) + cross(b.w, cross(b.w, cal.p))
    a_m = C_bi.T @ (f_body + lever) + cal.b_a
    w_m = C_bi.T @ b.w + cal.b_w
    return a_m, w_m


def compute_H_body(x, i):
    """6x18 Jacobian of IMU ``i``'s measurement with respect to the body error state."""
    _check_index(x, i)
    b, cal = x.body, x.imus[i]
    C_biT = quat_to_rot(cal.q).T
    R_T = quat_to_rot(b.q).T
    p = cal.p
    H = np.zeros((6, BODY_DIM))
    H[:3, A] = C_biT @ R_T
    H[:3, TH] = C_biT @ skew(R_T @ b.a)
    H[:3, W] = C_biT @ (skew(b.w) @ skew(p).T + skew(cross(b.w, p)).T)
    H[:3, AL] = C_biT @ skew(p).T
    H[3:, W] = C_biT
    return H


def compute_H_calib(x, i):
    """6x12 Jacobian with respect to IMU ``i``'s calibration error state.

    Columns of pinned extrinsics are zero.
    """
    _check_index(x, i)
    b, cal = x.body, x.imus[i]
    C_biT = quat_to_rot(cal.q).T
    H = np.zeros((6, 12))
    if not cal.pinned:
        Ww = skew(b.w)
        sensed = quat_to_rot(b.q).T @ b.a + cross(b.alpha, cal.p) + cross(b.w, cross(b.w, cal.p))
        H[:3, 0:3] = C_biT @ (skew(b.alpha) + Ww @ Ww)
        H[:3, 3:6] = skew(C_biT @ sensed)
        H[3:, 3:6] = skew(C_biT @ b.w)
    H[:3, 6:9] = np.eye(3)
    H[3:, 9:12] = np.eye(3)
    return H


def imu_jacobian(x, i, calibrating):
    """Full-width Jacobian ``[H_body | 0 .. H_calib(i) .. 0]``."""
    H = np.zeros((6, x.dim))
    H[:, :BODY_DIM] = compute_H_body(x, i)
    if calibrating:
        o = imu_offset(i)
        H[:, o : o + 12] = compute_H_calib(x, i)
    return H


def ekf_update(x, H, r, R, gate=None):
    """Kalman update with Joseph-form covariance.

    Returns ``(state, mahalanobis_sq)``. When ``gate`` is given and the innovation's
    squared Mahalanobis distance exceeds it, the state is returned unchanged.
    """
    P = x.P
    if H.shape[1] != P.shape[0]:
        raise ValueError(f"H has {H.shape[1]} columns, state has {P.shape[0]}")
    PHt = P @ H.T
    S = H @ PHt + R
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence(f"innovation covariance not positive definite at t={x.t:.6f}") from exc
    sol = np.linalg.solve(S, np.column_stack((PHt.T, r)))
    K = sol[:, :-1].T
    d2 = float(r @ sol[:, -1])
    if gate is not None and d2 > gate:
        return x, d2
    dx = K @ r
    if not np.all(np.isfinite(dx)):
        raise FilterDivergence(f"non-finite correction at t={x.t:.6f}")
    IKH = np.eye(P.shape[0]) - K @ H
    P_new = symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    out = inject_error(x, dx)
    out.P = P_new
    return out, d2


def process_imu(x, z, pn, calibrating, gate=None):
    """Propagate to the sample time and fuse one IMU sample.

    Samples older than the filter time are dropped: the input state is returned
    unchanged and a debug message is logged.
    """
    if z.t < x.t:
        log.debug("dropping stale IMU %d sample at t=%.6f (filter at %.6f)", z.imu_id, z.t, x.t)
        return x
    x = propagate(x, z.t, pn, calibrating)
    a_m, w_m = predict_imu_measurement(x, z.imu_id)
    r = z.z - np.concatenate((a_m, w_m))
    H = imu_jacobian(x, z.imu_id, calibrating)
    x, _ = ekf_update(x, H, r, z.R, gate)
    return x

