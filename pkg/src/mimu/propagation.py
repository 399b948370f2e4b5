"""Constant-acceleration / constant-angular-acceleration propagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .so3 import quat_from_rotvec, quat_mul, quat_to_rot, right_jacobian
from .state import AL, A, G_GLOBAL, P, TH, V, W, BodyState, FilterState, error_dim, imu_slices, symmetrize

MAX_DT = 1.0
NOISE_MAPPINGS = ("trapezoid", "transition")


@dataclass
class ProcessNoise:
    """Continuous-time drive densities; each block is multiplied by ``dt`` in :func:`build_Q`.

    ``mapping`` selects how the discrete noise enters the covariance, see
    :func:`predict_covariance`.
    """

    Q_a: np.ndarray = field(default_factory=lambda: np.eye(3) * 1.0)
    Q_w: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-4)
    Q_alpha: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.3)
    Q_ba: list = field(default_factory=list)
    Q_bw: list = field(default_factory=list)
    mapping: str = "trapezoid"

    def __post_init__(self):
        if self.mapping not in NOISE_MAPPINGS:
            raise ValueError(f"mapping must be one of {NOISE_MAPPINGS}, got {self.mapping!r}")

    @classmethod
    def from_imus(cls, noises, accel_drive=1.0, rate_drive=1e-4, ang_accel_drive=0.3):
        """Process noise with bias random walks taken from each IMU's :class:`NoiseParams`."""
        return cls(
            Q_a=np.eye(3) * accel_drive,
            Q_w=np.eye(3) * rate_drive,
            Q_alpha=np.eye(3) * ang_accel_drive,
            Q_ba=[np.eye(3) * n.accel_bias_rw**2 for n in noises],
            Q_bw=[np.eye(3) * n.gyro_bias_rw**2 for n in noises],
        )


def _check_dt(dt):
    if not 0.0 <= dt <= MAX_DT:
        raise ValueError(f"dt={dt!r} outside [0, {MAX_DT}]")


def predict_state(x, dt, g=G_GLOBAL):
    """Propagate the nominal state by ``dt`` seconds; calibration is carried unchanged.

    Acceleration and angular acceleration are held constant over the step, so position
    and attitude include their second-order terms.
    """
    _check_dt(dt)
    b = x.body
    acc = b.a + g
    body = BodyState(
        b.p + b.v * dt + 0.5 * acc * dt * dt,
        b.v + acc * dt,
        b.a.copy(),
        quat_mul(b.q, quat_from_rotvec((b.w + 0.5 * b.alpha * dt) * dt)),
        b.w + b.alpha * dt,
        b.alpha.copy(),
    )
    return FilterState(body, x.imus, x.P, x.t + dt)


def gravity_coupling(x, dt, g=G_GLOBAL):
    """Velocity-error sensitivity to the attitude error.

    The velocity state is driven by the global-frame specific force plus a constant
    global gravity vector, neither of which depends on attitude, so the block is zero
    for every ``g``.
    """
    return np.zeros((3, 3))


def compute_F(x, dt, g=G_GLOBAL):
    """Error-state transition matrix of :func:`predict_state`."""
    _check_dt(dt)
    n = x.dim
    F = np.eye(n)
    I3dt = np.eye(3) * dt
    # position chain
    F[P, V] = I3dt
    F[P, A] = 0.5 * dt * I3dt
    F[V, A] = I3dt
    F[V, TH] = gravity_coupling(x, dt, g)
    # orientation chain
    phi = (x.body.w + 0.5 * x.body.alpha * dt) * dt
    Jr = right_jacobian(phi)
    F[TH, TH] = quat_to_rot(quat_from_rotvec(phi)).T
    F[TH, W] = Jr * dt
    F[TH, AL] = Jr * (0.5 * dt * dt)
    F[W, AL] = I3dt
    return F


def build_Q(pn, n_imus, dt, calibrating):
    """Block-diagonal discrete process noise for ``n_imus`` IMUs."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    Q = np.zeros((error_dim(n_imus), error_dim(n_imus)))
    Q[A, A] = np.asarray(pn.Q_a) * dt
    Q[W, W] = np.asarray(pn.Q_w) * dt
    Q[AL, AL] = np.asarray(pn.Q_alpha) * dt
    if calibrating:
        for i in range(n_imus):
            _, _, sba, sbw = imu_slices(i)
            if i < len(pn.Q_ba):
                Q[sba, sba] = np.asarray(pn.Q_ba[i]) * dt
            if i < len(pn.Q_bw):
                Q[sbw, sbw] = np.asarray(pn.Q_bw[i]) * dt
    return Q


def predict_covariance(P, F, Q, mapping="trapezoid"):
    """Covariance after one step, symmetrised.

    ``"transition"`` gives ``F P F^T + F Q F^T``: all of the step's noise is injected at
    its start and carried through the full transition. ``"trapezoid"`` averages the two
    end points, ``F P F^T + (F Q F^T + Q) / 2``. For a random-walk acceleration this
    gives the velocity/acceleration cross term ``q dt^2 / 2`` of the continuous-time
    integral, whereas the transition form doubles it and makes every accelerometer
    update over-correct velocity on smooth motion.
    """
    if P.shape != F.shape or Q.shape != F.shape:
        raise ValueError(f"shape mismatch: P {P.shape}, F {F.shape}, Q {Q.shape}")
    if mapping == "transition":
        return symmetrize(F @ (P + Q) @ F.T)
    if mapping == "trapezoid":
        return symmetrize(F @ (P + 0.5 * Q) @ F.T + 0.5 * Q)
    raise ValueError(f"unknown noise mapping {mapping!r}")


def propagate(x, t, pn, calibrating, g=G_GLOBAL):
    """Advance state and covariance to time ``t`` in steps of at most ``MAX_DT``."""
    remaining = t - x.t
    if remaining < 0.0:
        raise ValueError(f"cannot propagate backwards from {x.t} to {t}")
    n_imus = x.n_imus
    while remaining > 0.0:
        dt = min(remaining, MAX_DT)
        F = compute_F(x, dt, g)
        Q = build_Q(pn, n_imus, dt, calibrating)
        P_new = predict_covariance(x.P, F, Q, pn.mapping)
        x = predict_state(x, dt, g)
        x.P = P_new
        remaining -= dt
        if remaining <= 0.0:
            x.t = float(t)
    return x
