"""Quaternion and rotation helpers.

Quaternions are Hamilton, scalar-first ``[w, x, y, z]`` numpy arrays. ``quat_to_rot(q)``
maps vectors from the quaternion's child frame into its parent frame, so for the body
attitude ``q_GB`` the matrix takes body vectors to the global frame.
"""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-8

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
_I3 = np.eye(3)


def _floats(v):
    return v.tolist() if isinstance(v, np.ndarray) else v


def skew(v):
    """Cross-product matrix, ``skew(v) @ u == np.cross(v, u)``."""
    v = _floats(v)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def cross(a, b):
    """Cross product of two 3-vectors (faster than ``np.cross`` for single vectors)."""
    a, b = _floats(a), _floats(b)
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def omega_matrix(w):
    """4x4 rate matrix for the kinematics ``dq/dt = 0.5 * omega_matrix(w) @ q``.

    The matrix acts on the vector-first ordering ``[x, y, z, w]``. Its top-left block is
    ``-skew(w)``, the last column is ``w`` and the last row is ``-w``, so it is
    antisymmetric and the integrated quaternion keeps unit norm. ``w`` is the
    body-frame rate. Use :func:`to_vector_first` and :func:`to_scalar_first` to convert.
    """
    w = np.asarray(w, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(w)
    out[:3, 3] = w
    out[3, :3] = -w
    return out


def to_vector_first(q):
    return np.array([q[1], q[2], q[3], q[0]])


def to_scalar_first(q):
    return np.array([q[3], q[0], q[1], q[2]])


def canonical(q):
    """Unit quaternion with non-negative scalar part."""
    w, x, y, z = _floats(q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if w < 0.0:
        n = -n
    return np.array([w / n, x / n, y / n, z / n])


def quat_mul(a, b):
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = _floats(a)
    bw, bx, by, bz = _floats(b)
    return canonical(
        np.array(
            [
                aw * bw - ax * bx - ay * by - az * bz,
                aw * bx + ax * bw + ay * bz - az * by,
                aw * by - ax * bz + ay * bw + az * bx,
                aw * bz + ax * by - ay * bx + az * bw,
            ]
        )
    )


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q):
    w, x, y, z = _floats(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_rotvec(theta):
    """Exponential map from a rotation vector (rad) to a unit quaternion."""
    x, y, z = _floats(theta)
    a2 = x * x + y * y + z * z
    angle = math.sqrt(a2)
    if angle < SMALL_ANGLE:
        # second-order series of cos(a/2) and sin(a/2)/a
        w, k = 1.0 - a2 / 8.0, 0.5 * (1.0 - a2 / 24.0)
    else:
        w, k = math.cos(0.5 * angle), math.sin(0.5 * angle) / angle
    return canonical(np.array([w, k * x, k * y, k * z]))


def quat_to_rotvec(q):
    """Logarithm map, the inverse of :func:`quat_from_rotvec` for angles below pi."""
    q = canonical(q)
    vec = q[1:]
    s = math.sqrt(vec[0] * vec[0] + vec[1] * vec[1] + vec[2] * vec[2])
    if s < SMALL_ANGLE:
        return 2.0 * vec / q[0]
    return 2.0 * math.atan2(s, q[0]) / s * vec


def rot_to_quat(R):
    """Rotation matrix to quaternion (Shepperd's method)."""
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical(q)


def quat_boxminus(q_new, q_old):
    """Local rotation vector ``d`` such that ``q_new = q_old ⊗ exp(d)``."""
    return quat_to_rotvec(quat_mul(quat_conj(q_old), q_new))


def right_jacobian(phi):
    """Right Jacobian of SO(3): ``exp(phi + d) ≈ exp(phi) exp(J_r(phi) d)``."""
    K = skew(phi)
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    if angle < 1e-6:
        return _I3 - 0.5 * K + K @ K / 6.0
    return _I3 - (1.0 - math.cos(angle)) / angle**2 * K + (angle - math.sin(angle)) / angle**3 * (K @ K)


def random_quat(rng):
    """Uniformly distributed random unit quaternion."""
    return canonical(rng.standard_normal(4))
