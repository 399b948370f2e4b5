"""Numerical observability analysis of the linearised filter.

Two constructions are provided. :func:`build_observability_matrix` stacks ``H F^k`` for a
single linearisation point. :func:`trajectory_observability` stacks ``H_k Phi_k`` with
the transition accumulated along a ground-truth trajectory, which is what the filter
actually sees. At one frozen point the specific force and the accelerometer biases
trade off exactly (neither changes under ``F``), so the frozen construction reports a
larger deficiency than the moving one.

IMU 0 defines the body frame, so its extrinsic columns are identically zero. Reports
give the raw deficiency and the deficiency with those columns removed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel, CameraSample, landmark_grid, project_pose, stack_observations
from .imu_update import imu_jacobian
from .propagation import compute_F
from .so3 import IDENTITY_QUAT, quat_from_rotvec
from .state import BODY_DIM, P, TH, ImuCalibration, error_dim, make_state
from .trajectory import gen_trajectory

DEFAULT_TOL = 1e-8


@dataclass
class ObservabilityReport:
    state_dim: int
    rank: int
    deficiency: int
    singular_values: np.ndarray
    tolerance: float
    pinned_columns: int = 0
    adjusted_rank: int | None = None
    adjusted_deficiency: int | None = None

    def __post_init__(self):
        if self.deficiency != self.state_dim - self.rank or self.deficiency < 0:
            raise ValueError("deficiency must equal state_dim - rank and be non-negative")

    def lines(self):
        out = [
            f"state dimension      {self.state_dim}",
            f"rank                 {self.rank}",
            f"deficiency           {self.deficiency}",
        ]
        if self.adjusted_rank is not None:
            free = self.state_dim - self.pinned_columns
            out += [
                f"pinned columns       {self.pinned_columns}",
                f"free dimension       {free}",
                f"rank (free columns)  {self.adjusted_rank}",
                f"deficiency (free)    {self.adjusted_deficiency}",
            ]
        out.append(f"tolerance            {self.tolerance:g} x sigma_max")
        return out


def build_observability_matrix(F, H, n=None):
    """Stack ``H F^k`` for ``k = 0..n`` (``n`` defaults to the state dimension)."""
    F = np.asarray(F, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError(f"F must be square, got {F.shape}")
    if H.shape[1] != F.shape[0]:
        raise ValueError(f"H has {H.shape[1]} columns, F is {F.shape[0]}x{F.shape[0]}")
    n = F.shape[0] if n is None else int(n)
    if n < 0:
        raise ValueError("order must be non-negative")
    blocks, M = [], H
    for _ in range(n + 1):
        blocks.append(M)
        M = M @ F
    return np.vstack(blocks)


def _numerical_rank(O, tol):
    if O.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(O, compute_uv=False)
    if s[0] == 0.0:
        return 0, s
    return int(np.count_nonzero(s > tol * s[0])), s


def rank_report(O, tol=DEFAULT_TOL, pinned_columns=None):
    """Rank and deficiency of ``O`` from its singular values.

    ``pinned_columns`` lists columns that are zero by construction; when given, the rank
    of ``O`` without them is reported as well.
    """
    O = np.atleast_2d(np.asarray(O, dtype=float))
    rank, s = _numerical_rank(O, tol)
    dim = O.shape[1]
    rep = ObservabilityReport(dim, rank, dim - rank, s, tol)
    if pinned_columns is not None:
        pinned = np.zeros(dim, dtype=bool)
        pinned[np.asarray(pinned_columns, dtype=int)] = True
        r_adj, _ = _numerical_rank(O[:, ~pinned], tol)
        rep.pinned_columns = int(pinned.sum())
        rep.adjusted_rank = r_adj
        rep.adjusted_deficiency = int((~pinned).sum()) - r_adj
    return rep


def pinned_columns(x):
    """Error-state columns of pinned extrinsics."""
    cols = []
    for i, cal in enumerate(x.imus):
        if cal.pinned:
            o = BODY_DIM + 12 * i
            cols.extend(range(o, o + 6))
    return cols


def random_calibrations(n_imus, rng):
    """IMU 0 pinned at the body origin; others with distinct random lever arms and tilts."""
    cals = [ImuCalibration(np.zeros(3), IDENTITY_QUAT.copy(), rng.normal(0, 0.05, 3), rng.normal(0, 0.005, 3), True)]
    for _ in range(1, n_imus):
        cals.append(
            ImuCalibration(
                rng.uniform(-0.2, 0.2, 3),
                quat_from_rotvec(rng.normal(0, 0.3, 3)),
                rng.normal(0, 0.05, 3),
                rng.normal(0, 0.005, 3),
                False,
            )
        )
    return cals


def camera_jacobian(x, cam, landmarks, max_landmarks=3):
    """Rows of the camera Jacobian for up to ``max_landmarks`` visible landmarks."""
    ids = [j for j, L in enumerate(landmarks) if project_pose(x.body.p, x.body.q, cam, L) is not None]
    ids = np.array(ids[:max_landmarks], dtype=int)
    uv = np.array([project_pose(x.body.p, x.body.q, cam, landmarks[j]) for j in ids]).reshape(-1, 2)
    _, J = stack_observations(x.body.p, x.body.q, cam, landmarks, CameraSample(0.0, ids, uv))
    H = np.zeros((J.shape[0], x.dim))
    H[:, P] = J[:, :3]
    H[:, TH] = J[:, 3:]
    return H


def trajectory_observability(traj, cals, dt=0.05, steps=80, camera=None, landmarks=None, camera_every=4):
    """Observability matrix ``[H_k Phi_k]`` linearised along ``traj``.

    Every IMU contributes rows at each step; with a camera, rows from up to three
    visible landmarks are added every ``camera_every`` steps.
    """
    dim = error_dim(len(cals))
    Phi = np.eye(dim)
    rows = []
    for k in range(steps):
        x = make_state(cals, body=traj.state(k * dt))
        for i in range(len(cals)):
            rows.append(imu_jacobian(x, i, True) @ Phi)
        if camera is not None and k % camera_every == 0:
            rows.append(camera_jacobian(x, camera, landmarks) @ Phi)
        Phi = compute_F(x, dt) @ Phi
    return np.vstack(rows), x


def analyze(n_imus, with_camera=False, seed=0, tol=DEFAULT_TOL, frozen=False):
    """Rank report for ``n_imus`` IMUs at a seeded generic trajectory and calibration.

    ``frozen`` uses a single linearisation point (``H F^k``) instead of the trajectory.
    """
    if n_imus < 1:
        raise ValueError("need at least one IMU")
    rng = np.random.default_rng(seed)
    cals = random_calibrations(n_imus, rng)
    traj = gen_trajectory(int(rng.integers(2**31)))
    cam = CameraModel() if with_camera else None
    landmarks = landmark_grid() if with_camera else None
    if frozen:
        x = make_state(cals, body=traj.state(1.0))
        H = np.vstack([imu_jacobian(x, i, True) for i in range(n_imus)])
        if with_camera:
            H = np.vstack((H, camera_jacobian(x, cam, landmarks)))
        O = build_observability_matrix(compute_F(x, 0.05), H)
    else:
        O, x = trajectory_observability(traj, cals, camera=cam, landmarks=landmarks)
    return rank_report(O, tol, pinned_columns(x))
