"""Closed-form 6-DoF ground-truth trajectories built from sums of sinusoids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import G_GLOBAL, BodyState


@dataclass
class TrajectoryBounds:
    pos_amplitude_m: float = 2.0
    ang_amplitude_rad: float = 0.3
    freq_min_hz: float = 0.05
    freq_max_hz: float = 0.5
    n_terms: int = 3

    def __post_init__(self):
        if self.pos_amplitude_m < 0 or self.ang_amplitude_rad < 0:
            raise ValueError("amplitude bounds must be non-negative")
        if not 0 < self.freq_min_hz <= self.freq_max_hz:
            raise ValueError("frequency bounds must satisfy 0 < min <= max")
        if self.n_terms < 1:
            raise ValueError("n_terms must be at least 1")


def _sines(amp, freq, phase, t):
    """Value and first three derivatives of ``sum_k A_k sin(2 pi f_k t + phi_k)`` per row.

    ``amp``, ``freq``, ``phase`` are (3, K); ``t`` is (n,). Returns four (n, 3) arrays.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w = 2.0 * np.pi * freq  # (3, K)
    arg = w[None] * t[:, None, None] + phase[None]  # (n, 3, K)
    s, c = np.sin(arg), np.cos(arg)
    a = amp[None]
    return (
        (a * s).sum(-1),
        (a * w * c).sum(-1),
        (-a * w**2 * s).sum(-1),
        (-a * w**3 * c).sum(-1),
    )


@dataclass
class TrajectoryModel:
    """Per-axis position sinusoids and per-Euler-angle (roll, pitch, yaw; ZYX) sinusoids."""

    pos_amp: np.ndarray
    pos_freq: np.ndarray
    pos_phase: np.ndarray
    ang_amp: np.ndarray
    ang_freq: np.ndarray
    ang_phase: np.ndarray

    @classmethod
    def static(cls):
        z = np.zeros((3, 1))
        return cls(z, z + 0.1, z, z, z + 0.1, z)

    def position(self, t):
        """Position, velocity and kinematic acceleration, each (n, 3)."""
        p, v, acc, _ = _sines(self.pos_amp, self.pos_freq, self.pos_phase, t)
        return p, v, acc

    def euler(self, t):
        """Euler angles ``[roll, pitch, yaw]`` and their first two derivatives."""
        e, de, dde, _ = _sines(self.ang_amp, self.ang_freq, self.ang_phase, t)
        return e, de, dde

    def attitude(self, t):
        """Body-to-global quaternions (n, 4)."""
        e, _, _ = self.euler(t)
        return euler_to_quat(e)

    def rates(self, t):
        """Body-frame angular rate and angular acceleration, each (n, 3)."""
        e, de, dde = self.euler(t)
        sr, cr = np.sin(e[:, 0]), np.cos(e[:, 0])
        sp, cp = np.sin(e[:, 1]), np.cos(e[:, 1])
        dr, dp, dy = de.T
        ddr, ddp, ddy = dde.T
        w = np.column_stack(
            (
                dr - dy * sp,
                dp * cr + dy * cp * sr,
                -dp * sr + dy * cp * cr,
            )
        )
        alpha = np.column_stack(
            (
                ddr - ddy * sp - dy * dp * cp,
                ddp * cr - dp * dr * sr + ddy * cp * sr - dy * dp * sp * sr + dy * dr * cp * cr,
                -ddp * sr - dp * dr * cr + ddy * cp * cr - dy * dp * sp * cr - dy * dr * cp * sr,
            )
        )
        return w, alpha

    def specific_force(self, t):
        """Global-frame specific force, ``p'' - g``."""
        _, _, acc = self.position(t)
        return acc - G_GLOBAL

    def body_states(self, t):
        """Vectorised ground truth: dict of (n, k) arrays ``p v a q w alpha``."""
        p, v, acc = self.position(t)
        w, alpha = self.rates(t)
        return {"p": p, "v": v, "a": acc - G_GLOBAL, "q": self.attitude(t), "w": w, "alpha": alpha}

    def state(self, t):
        """Ground-truth :class:`BodyState` at scalar time ``t``."""
        s = self.body_states(np.array([t]))
        return BodyState(*(s[k][0].copy() for k in ("p", "v", "a", "q", "w", "alpha")))


def euler_to_quat(e):
    """ZYX Euler angles ``[roll, pitch, yaw]`` (n, 3) to scalar-first quaternions (n, 4)."""
    e = np.atleast_2d(e)
    hr, hp, hy = 0.5 * e[:, 0], 0.5 * e[:, 1], 0.5 * e[:, 2]
    cr, sr = np.cos(hr), np.sin(hr)
    cp, sp = np.cos(hp), np.sin(hp)
    cy, sy = np.cos(hy), np.sin(hy)
    q = np.column_stack(
        (
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        )
    )
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    return q


def gen_trajectory(rng_seed, bounds=None):
    """Random sum-of-sinusoids trajectory.

    Each of the ``n_terms`` sinusoids per axis gets an amplitude drawn uniformly from
    ``[0, bound / n_terms]``, so every axis stays within its bound.
    """
    b = bounds or TrajectoryBounds()
    rng = np.random.default_rng(rng_seed)
    shape = (3, b.n_terms)

    def block(amp_bound):
        amp = rng.uniform(0.0, amp_bound / b.n_terms, shape)
        freq = rng.uniform(b.freq_min_hz, b.freq_max_hz, shape)
        phase = rng.uniform(0.0, 2.0 * np.pi, shape)
        return amp, freq, phase

    return TrajectoryModel(*block(b.pos_amplitude_m), *block(b.ang_amplitude_rad))

