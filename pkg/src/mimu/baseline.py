"""Classical IMU-driven error-state EKF used as the single-IMU comparison baseline.

IMU 0 drives the prediction (zero-order hold between samples); the camera is the only
update. Error state: ``[dp dv dtheta db_a db_w]`` with a right attitude error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .camera import compress, stack_observations
from .imu_update import FilterDivergence
from .so3 import quat_from_rotvec, quat_mul, quat_to_rot, right_jacobian, skew
from .state import G_GLOBAL, symmetrize

DIM = 15
_P, _V, _TH, _BA, _BW = (slice(3 * k, 3 * k + 3) for k in range(5))


@dataclass
class PredictorState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray
    P: np.ndarray
    t: float = 0.0
    last_accel: np.ndarray | None = None
    last_gyro: np.ndarray | None = None


class SinglePredictorEKF:
    """IMU-propagated ESKF with camera updates."""

    def __init__(self, state, noise, cam, landmarks, g=G_GLOBAL):
        self.x = state
        self.noise = noise
        self.cam = cam
        self.landmarks = landmarks
        self.g = g

    def _propagate(self, x, t):
        dt = t - x.t
        if dt <= 0.0 or x.last_accel is None:
            x.t = max(x.t, t)
            return
        n = self.noise
        f = x.last_accel - x.b_a
        w = x.last_gyro - x.b_w
        R = quat_to_rot(x.q)
        acc = R @ f + self.g
        phi = w * dt

        F = np.eye(DIM)
        F[_P, _V] = np.eye(3) * dt
        F[_V, _TH] = -R @ skew(f) * dt
        F[_V, _BA] = -R * dt
        F[_TH, _TH] = quat_to_rot(quat_from_rotvec(phi)).T
        F[_TH, _BW] = -right_jacobian(phi) * dt
        Q = np.zeros((DIM, DIM))
        Q[_V, _V] = np.eye(3) * n.accel_density**2 * dt
        Q[_TH, _TH] = np.eye(3) * n.gyro_density**2 * dt
        Q[_BA, _BA] = np.eye(3) * n.accel_bias_rw**2 * dt
        Q[_BW, _BW] = np.eye(3) * n.gyro_bias_rw**2 * dt

        x.p = x.p + x.v * dt + 0.5 * acc * dt * dt
        x.v = x.v + acc * dt
        x.q = quat_mul(x.q, quat_from_rotvec(phi))
        x.P = symmetrize(F @ x.P @ F.T + Q)
        x.t = t

    def process_imu(self, z):
        if z.t < self.x.t:
            return
        self._propagate(self.x, z.t)
        self.x.last_accel = z.accel.copy()
        self.x.last_gyro = z.gyro.copy()

    def process_camera(self, z):
        if z.t < self.x.t or len(z.ids) == 0:
            return
        self._propagate(self.x, z.t)
        x = self.x
        r, J = stack_observations(x.p, x.q, self.cam, self.landmarks, z)
        if r.size == 0:
            return
        r, J, R = compress(r, J, self.cam.pixel_noise_std)
        H = np.zeros((J.shape[0], DIM))
        H[:, _P] = J[:, :3]
        H[:, _TH] = J[:, 3:]
        PHt = x.P @ H.T
        try:
            cf = cho_factor(H @ PHt + R)
        except LinAlgError as exc:
            raise FilterDivergence(f"baseline innovation covariance failed at t={x.t:.6f}") from exc
        K = cho_solve(cf, PHt.T).T
        dx = K @ r
        if not np.all(np.isfinite(dx)):
            raise FilterDivergence(f"non-finite baseline correction at t={x.t:.6f}")
        IKH = np.eye(DIM) - K @ H
        x.P = symmetrize(IKH @ x.P @ IKH.T + K @ R @ K.T)
        x.p = x.p + dx[_P]
        x.v = x.v + dx[_V]
        x.q = quat_mul(x.q, quat_from_rotvec(dx[_TH]))
        x.b_a = x.b_a + dx[_BA]
        x.b_w = x.b_w + dx[_BW]

    def is_finite(self):
        return bool(np.all(np.isfinite(self.x.p)) and np.all(np.isfinite(self.x.q)))

    def pose_at(self, t):
        """State extrapolated to ``t`` without touching the filter."""
        tmp = replace(self.x)
        self._propagate(tmp, t)
        return tmp
