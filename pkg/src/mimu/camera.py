"""Pinhole camera update against a field of known landmarks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imu_update import ekf_update
from .propagation import propagate
from .so3 import quat_to_rot, skew
from .state import TH, P

MIN_DEPTH = 0.1

# camera z (optical axis) along body x, camera x along -body y, camera y along -body z
FORWARD_LOOKING = np.array([0.5, -0.5, 0.5, -0.5])


@dataclass
class CameraModel:
    f_px: float = 400.0
    c: np.ndarray = field(default_factory=lambda: np.array([320.0, 200.0]))
    resolution: tuple = (640, 400)
    q_BC: np.ndarray = field(default_factory=lambda: FORWARD_LOOKING.copy())
    p_BC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pixel_noise_std: float = 0.5
    rate_hz: float = 20.0

    def __post_init__(self):
        if not self.f_px > 0.0:
            raise ValueError("focal length must be positive")


@dataclass
class CameraSample:
    t: float
    ids: np.ndarray
    uv: np.ndarray  # (k, 2)


def landmark_grid(nx=10, ny=10, spacing_m=0.5, offset_m=5.0):
    """Planar grid of landmarks facing the origin, ``offset_m`` ahead along global x."""
    ys = (np.arange(nx) - (nx - 1) / 2.0) * spacing_m
    zs = (np.arange(ny) - (ny - 1) / 2.0) * spacing_m
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    return np.column_stack((np.full(Y.size, offset_m), Y.ravel(), Z.ravel()))


def camera_point(p, q_GB, cam, L):
    """Landmark ``L`` expressed in the camera frame."""
    R_T = quat_to_rot(q_GB).T
    return quat_to_rot(cam.q_BC).T @ (R_T @ (np.asarray(L) - p) - cam.p_BC)


def project_pose(p, q_GB, cam, L):
    """Pixel of landmark ``L`` seen from body pose ``(p, q_GB)``, or ``None`` if not visible."""
    pc = camera_point(p, q_GB, cam, L)
    if pc[2] <= MIN_DEPTH:
        return None
    uv = cam.f_px * pc[:2] / pc[2] + cam.c
    w, h = cam.resolution
    if not (0.0 <= uv[0] < w and 0.0 <= uv[1] < h):
        return None
    return uv


def project(x, cam, L):
    return project_pose(x.body.p, x.body.q, cam, L)


def projection_jacobian(p, q_GB, cam, L):
    """2x6 Jacobian of the pixel with respect to ``[dp, dtheta]`` of the body."""
    R_T = quat_to_rot(q_GB).T
    C_T = quat_to_rot(cam.q_BC).T
    d_body = R_T @ (np.asarray(L) - p)
    x, y, z = C_T @ (d_body - cam.p_BC)
    J_proj = cam.f_px / z * np.array([[1.0, 0.0, -x / z], [0.0, 1.0, -y / z]])
    J = np.empty((2, 6))
    J[:, :3] = J_proj @ (-C_T @ R_T)
    J[:, 3:] = J_proj @ (C_T @ skew(d_body))
    return J


def stack_observations(p, q_GB, cam, landmarks, sample):
    """Innovations ``(r, J)`` for all observations in front of the estimated camera.

    ``J`` has one row per pixel coordinate and six columns (``dp``, ``dtheta``).
    Detections whose predicted pixel falls outside the image are still used.
    """
    R_T = quat_to_rot(q_GB).T
    C_T = quat_to_rot(cam.q_BC).T
    L = landmarks[np.asarray(sample.ids, dtype=int)]
    d_body = (L - p) @ R_T.T
    pc = (d_body - cam.p_BC) @ C_T.T
    keep = pc[:, 2] > MIN_DEPTH
    if not np.any(keep):
        return np.zeros(0), np.zeros((0, 6))
    d_body, pc, uv = d_body[keep], pc[keep], np.asarray(sample.uv)[keep]
    inv_z = 1.0 / pc[:, 2]
    pred = cam.f_px * pc[:, :2] * inv_z[:, None] + cam.c
    k = len(pc)
    # d(uv)/d(pc), shape (k, 2, 3)
    Jp = np.zeros((k, 2, 3))
    Jp[:, 0, 0] = Jp[:, 1, 1] = cam.f_px * inv_z
    Jp[:, 0, 2] = -cam.f_px * pc[:, 0] * inv_z**2
    Jp[:, 1, 2] = -cam.f_px * pc[:, 1] * inv_z**2
    J = np.empty((k, 2, 6))
    J[:, :, :3] = Jp @ (-C_T @ R_T)
    sk = np.zeros((k, 3, 3))
    sk[:, 0, 1], sk[:, 0, 2] = -d_body[:, 2], d_body[:, 1]
    sk[:, 1, 0], sk[:, 1, 2] = d_body[:, 2], -d_body[:, 0]
    sk[:, 2, 0], sk[:, 2, 1] = -d_body[:, 1], d_body[:, 0]
    J[:, :, 3:] = Jp @ (C_T @ sk)
    return (uv - pred).reshape(-1), J.reshape(-1, 6)


def compress(r, J, sigma):
    """Reduce a tall measurement with few state columns to an equivalent square one.

    With isotropic noise, projecting onto the column space of ``J`` via a thin QR keeps
    all information about the state. Returns ``(r', J', R')``.
    """
    if J.shape[0] <= J.shape[1]:
        return r, J, np.eye(J.shape[0]) * sigma**2
    Qm, T = np.linalg.qr(J, mode="reduced")
    return Qm.T @ r, T, np.eye(T.shape[0]) * sigma**2


def process_camera(x, z, cam, landmarks, pn, calibrating, gate=None):
    """Propagate to the frame time and apply one joint update over all observations."""
    if z.t < x.t:
        return x
    if len(z.ids) == 0:
        return x
    x = propagate(x, z.t, pn, calibrating)
    r, J = stack_observations(x.body.p, x.body.q, cam, landmarks, z)
    if r.size == 0:
        return x
    r, J, R = compress(r, J, cam.pixel_noise_std)
    H = np.zeros((J.shape[0], x.dim))
    H[:, P] = J[:, :3]
    H[:, TH] = J[:, 3:]
    x, _ = ekf_update(x, H, r, R, gate)
    return x

