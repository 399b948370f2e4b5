"""Filter state, error-state layout and covariance bookkeeping.

Error-state layout (``18 + 12 * n_imus`` entries)::

    body:     [dp dv da dtheta dw dalpha]          0..17
    imu k:    [dp_BI dtheta_BI db_a db_w]          18 + 12k .. 18 + 12k + 11

Vector states are corrected additively. Attitudes use a local (right) rotation-vector
error, ``q_true = q_est ⊗ exp(dtheta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .so3 import IDENTITY_QUAT, quat_from_rotvec, quat_mul

GRAVITY = 9.80665
G_GLOBAL = np.array([0.0, 0.0, -GRAVITY])
MG = GRAVITY * 1e-3

BODY_DIM = 18
IMU_DIM = 12

# body slices
P = slice(0, 3)
V = slice(3, 6)
A = slice(6, 9)
TH = slice(9, 12)
W = slice(12, 15)
AL = slice(15, 18)


def error_dim(n_imus):
    """Size of the error state for ``n_imus`` IMUs (IMU 0 included)."""
    if n_imus < 1:
        raise ValueError("at least one IMU is required")
    return BODY_DIM + IMU_DIM * n_imus


def imu_offset(i):
    return BODY_DIM + IMU_DIM * i


def imu_slices(i):
    """Slices of IMU ``i``'s lever arm, extrinsic rotation, accel bias and gyro bias errors."""
    o = imu_offset(i)
    return slice(o, o + 3), slice(o + 3, o + 6), slice(o + 6, o + 9), slice(o + 9, o + 12)


@dataclass
class NoiseParams:
    """White-noise densities and bias random walks of one IMU.

    ``accel_density`` is in m/s^2/sqrt(Hz), ``gyro_density`` in rad/s/sqrt(Hz); the
    random walks are in m/s^2/sqrt(s) and rad/s/sqrt(s).
    """

    accel_density: float
    gyro_density: float
    accel_bias_rw: float = 1e-4
    gyro_bias_rw: float = 1e-5
    rate_hz: float = 100.0

    def __post_init__(self):
        for name in ("accel_density", "gyro_density", "accel_bias_rw", "gyro_bias_rw", "rate_hz"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def accel_std(self):
        """Per-sample accelerometer noise standard deviation."""
        return self.accel_density * np.sqrt(self.rate_hz)

    @property
    def gyro_std(self):
        return self.gyro_density * np.sqrt(self.rate_hz)

    def measurement_cov(self):
        return np.diag([self.accel_std**2] * 3 + [self.gyro_std**2] * 3)


# accel in mg/sqrt(Hz), gyro in mrad/s/sqrt(Hz)
_PRESETS = {
    "VN300": (0.14, 0.061),
    "VN100": (0.14, 0.061),
    "DETA10": (40.0, 0.049),
}


def preset_noise(name, rate_hz=100.0, **kwargs):
    """Noise densities of a named IMU, converted to SI units."""
    key = name.upper().replace("-", "")
    if key not in _PRESETS:
        raise ValueError(f"unknown IMU preset {name!r}; expected one of {sorted(_PRESETS)}")
    accel_mg, gyro_mrad = _PRESETS[key]
    return NoiseParams(accel_mg * MG, gyro_mrad * 1e-3, rate_hz=rate_hz, **kwargs)


@dataclass
class BodyState:
    """Kinematic body state.

    ``a`` is the global-frame specific force (``dv/dt = a + g``); ``w`` and ``alpha`` are
    expressed in the body frame; ``q`` rotates body vectors into the global frame.
    """

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a: np.ndarray = field(default_factory=lambda: -G_GLOBAL.copy())
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self):
        return BodyState(self.p.copy(), self.v.copy(), self.a.copy(), self.q.copy(), self.w.copy(), self.alpha.copy())


@dataclass
class ImuCalibration:
    """Extrinsics (IMU frame -> body frame) and additive biases of one IMU."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pinned: bool = False

    def __post_init__(self):
        if self.pinned and (np.any(self.p != 0.0) or np.any(self.q != IDENTITY_QUAT)):
            raise ValueError("a pinned IMU must have zero lever arm and identity rotation")

    def copy(self):
        return ImuCalibration(self.p.copy(), self.q.copy(), self.b_a.copy(), self.b_w.copy(), self.pinned)


@dataclass
class FilterState:
    body: BodyState
    imus: list
    P: np.ndarray
    t: float = 0.0

    @property
    def n_imus(self):
        return len(self.imus)

    @property
    def dim(self):
        return error_dim(len(self.imus))

    def copy(self):
        return FilterState(self.body.copy(), [c.copy() for c in self.imus], self.P.copy(), self.t)

    def pinned_indices(self):
        """Error-state indices that are held fixed (pinned extrinsics)."""
        idx = []
        for i, cal in enumerate(self.imus):
            if cal.pinned:
                o = imu_offset(i)
                idx.extend(range(o, o + 6))
        return np.array(idx, dtype=int)


@dataclass
class InitialSigmas:
    """One-sigma initial uncertainties used to seed the covariance."""

    p: float = 0.0
    v: float = 0.0
    a: float = 1.0
    theta: float = 0.0
    w: float = np.sqrt(0.1)
    alpha: float = 1.0
    p_bi: float = 0.02
    theta_bi: float = np.deg2rad(5.0)
    b_a: float = 0.1
    b_w: float = 0.01


def initial_covariance(imus, sigmas=None):
    """Diagonal initial covariance; pinned extrinsic rows stay exactly zero."""
    s = sigmas or InitialSigmas()
    n = error_dim(len(imus))
    d = np.zeros(n)
    for sl, val in ((P, s.p), (V, s.v), (A, s.a), (TH, s.theta), (W, s.w), (AL, s.alpha)):
        d[sl] = val**2
    for i, cal in enumerate(imus):
        sp, sth, sba, sbw = imu_slices(i)
        if not cal.pinned:
            d[sp] = s.p_bi**2
            d[sth] = s.theta_bi**2
        d[sba] = s.b_a**2
        d[sbw] = s.b_w**2
    return np.diag(d)


def make_state(imus, body=None, P=None, t=0.0, sigmas=None):
    body = body if body is not None else BodyState()
    if P is None:
        P = initial_covariance(imus, sigmas)
    return FilterState(body, list(imus), np.array(P, dtype=float), float(t))


def inject_error(x, dx):
    """Apply an error-state correction, returning a new state.

    Quaternions are updated multiplicatively and renormalised; entries belonging to
    pinned extrinsics are ignored.
    """
    dx = np.asarray(dx, dtype=float)
    if dx.shape != (x.dim,):
        raise ValueError(f"error vector has shape {dx.shape}, expected ({x.dim},)")
    b = x.body
    body = BodyState(
        b.p + dx[P],
        b.v + dx[V],
        b.a + dx[A],
        quat_mul(b.q, quat_from_rotvec(dx[TH])),
        b.w + dx[W],
        b.alpha + dx[AL],
    )
    imus = []
    for i, cal in enumerate(x.imus):
        sp, sth, sba, sbw = imu_slices(i)
        if cal.pinned:
            p, q = cal.p.copy(), cal.q.copy()
        else:
            p, q = cal.p + dx[sp], quat_mul(cal.q, quat_from_rotvec(dx[sth]))
        imus.append(ImuCalibration(p, q, cal.b_a + dx[sba], cal.b_w + dx[sbw], cal.pinned))
    return FilterState(body, imus, x.P, x.t)


def symmetrize(P):
    return 0.5 * (P + P.T)


def check_covariance(P, sym_tol=1e-12, eig_floor=-1e-9):
    """Raise ``ValueError`` if ``P`` is asymmetric or has a negative eigenvalue."""
    scale = max(np.abs(P).max(), 1e-300)
    asym = np.abs(P - P.T).max()
    if asym > sym_tol * scale:
        raise ValueError(f"covariance asymmetry {asym:.3e} exceeds {sym_tol:g} * ||P||")
    lam = np.linalg.eigvalsh(P).min()
    if lam < eig_floor:
        raise ValueError(f"covariance min eigenvalue {lam:.3e} below {eig_floor:g}")
    return lam


def with_time(x, t):
    return replace(x, t=float(t))
