"""Stateful wrapper around the functional multi-IMU filter."""

from __future__ import annotations

import logging

import numpy as np

from . import _kernels
from .camera import process_camera
from .imu_update import FilterDivergence, ekf_update, imu_jacobian, predict_imu_measurement
from .propagation import MAX_DT, build_Q, propagate
from .state import G_GLOBAL, BodyState, FilterState, ImuCalibration, check_covariance

log = logging.getLogger(__name__)


def pack_state(x):
    """Flat nominal vector in the kernel layout, plus the pinned flags."""
    b = x.body
    parts = [b.p, b.v, b.a, b.q, b.w, b.alpha]
    for cal in x.imus:
        parts += [cal.p, cal.q, cal.b_a, cal.b_w]
    pinned = np.array([cal.pinned for cal in x.imus], dtype=np.bool_)
    return np.concatenate(parts).astype(float), pinned


def unpack_state(xn, P, t, pinned):
    """Inverse of :func:`pack_state`; arrays are copied."""
    xn = np.array(xn, dtype=float)
    body = BodyState(xn[0:3], xn[3:6], xn[6:9], xn[9:13], xn[13:16], xn[16:19])
    imus = []
    for i, pin in enumerate(pinned):
        o = _kernels.NOM_BODY + _kernels.NOM_IMU * i
        imus.append(ImuCalibration(xn[o : o + 3], xn[o + 3 : o + 7], xn[o + 7 : o + 10], xn[o + 10 : o + 13], bool(pin)))
    return FilterState(body, imus, np.array(P, dtype=float), float(t))


class MultiImuFilter:
    """Centralised filter fusing every IMU sample as an update.

    Parameters
    ----------
    state : FilterState
        Initial estimate and covariance.
    process_noise : ProcessNoise
    calibrating : bool
        Estimate extrinsics and biases online; otherwise calibration columns of the
        IMU Jacobian are zero and calibration process noise is off.
    camera, landmarks : optional
        Pinhole model and known landmark positions for the camera update.
    gate : float, optional
        Chi-square threshold for innovation gating, off when ``None``.
    check_covariance : bool
        Verify symmetry and eigenvalue floor after every update (slow).
    compiled : bool
        Run IMU propagation and updates through the compiled kernels. The numpy path
        gives the same numbers to rounding and is kept for reference and debugging.
    """

    def __init__(self, state, process_noise, calibrating=True, camera=None, landmarks=None,
                 gate=None, check_covariance=False, compiled=True):
        self.pn = process_noise
        self.calibrating = calibrating
        self.camera = camera
        self.landmarks = landmarks
        self.gate = gate
        self.check_covariance = check_covariance
        self.compiled = compiled
        self.n_dropped = 0
        self.n_updates = 0
        self.min_eig = np.inf
        self.innovations = {}
        self.x = state
        self._Qc = build_Q(process_noise, state.n_imus, 1.0, calibrating)

    @property
    def x(self):
        """Current estimate as a :class:`FilterState` (a fresh copy)."""
        return unpack_state(self._xn, self._P, self._t, self._pinned)

    @x.setter
    def x(self, state):
        self._xn, self._pinned = pack_state(state)
        self._P = np.array(state.P, dtype=float)
        self._t = float(state.t)

    @property
    def t(self):
        return self._t

    @property
    def P(self):
        return self._P

    def is_finite(self):
        return bool(np.all(np.isfinite(self._xn)))

    def _after_update(self):
        if self.check_covariance:
            try:
                self.min_eig = min(self.min_eig, check_covariance(self._P))
            except ValueError as exc:
                raise FilterDivergence(str(exc)) from exc
        self.n_updates += 1

    def _propagate_compiled(self, t):
        remaining = t - self._t
        while remaining > 0.0:
            dt = min(remaining, MAX_DT)
            self._P = _kernels.predict(self._xn, self._P, dt, self._Qc, G_GLOBAL, self.pn.mapping == "trapezoid")
            remaining -= dt
        self._t = float(t)

    def process_imu(self, z):
        if z.t < self._t:
            self.n_dropped += 1
            log.debug("dropped stale IMU %d sample at %.6f", z.imu_id, z.t)
            return
        if not 0 <= z.imu_id < len(self._pinned):
            raise IndexError(f"IMU index {z.imu_id} out of range")
        if self.compiled:
            self._propagate_compiled(z.t)
            status, P_new, _, r = _kernels.imu_update(
                self._xn, self._P, z.imu_id, z.z, np.asarray(z.R, dtype=float), self.calibrating,
                self._pinned, -1.0 if self.gate is None else float(self.gate),
            )
            if status == _kernels.NOT_PD:
                raise FilterDivergence(f"innovation covariance not positive definite at t={self._t:.6f}")
            if status == _kernels.NON_FINITE:
                raise FilterDivergence(f"non-finite correction at t={self._t:.6f}")
            self._P = P_new
            self.innovations[z.imu_id] = r
        else:
            x = propagate(self.x, z.t, self.pn, self.calibrating)
            a_m, w_m = predict_imu_measurement(x, z.imu_id)
            r = z.z - np.concatenate((a_m, w_m))
            self.innovations[z.imu_id] = r
            self.x, _ = ekf_update(x, imu_jacobian(x, z.imu_id, self.calibrating), r, z.R, self.gate)
        self._after_update()

    def process_camera(self, z):
        if z.t < self._t:
            self.n_dropped += 1
            return
        if len(z.ids) == 0:
            return
        self.x = process_camera(self.x, z, self.camera, self.landmarks, self.pn, self.calibrating, self.gate)
        self._after_update()

    def state_at(self, t):
        """Estimate extrapolated to ``t`` (no update applied to the filter)."""
        x = self.x
        if t <= x.t:
            return x
        return propagate(x, t, self.pn, self.calibrating)
