"""Sensor simulation, single runs and Monte Carlo campaigns."""

from __future__ import annotations

import heapq
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baseline import PredictorState, SinglePredictorEKF
from .camera import CameraModel, CameraSample, landmark_grid
from .filter import MultiImuFilter
from .imu_update import FilterDivergence, ImuSample
from .propagation import ProcessNoise
from .so3 import quat_boxminus, quat_from_rotvec, quat_mul, quat_to_rot
from .state import (
    BODY_DIM, TH, ImuCalibration, NoiseParams, P, error_dim, imu_slices, make_state, preset_noise,
)
from .trajectory import TrajectoryBounds, gen_trajectory

log = logging.getLogger(__name__)

MODES = ("multi_update", "single_predictor")


@dataclass
class InitErrorStd:
    pos_m: float = 0.02
    ang_rad: float = float(np.deg2rad(5.0))
    ba: float = 0.1
    bw: float = 0.01


@dataclass
class ImuSpec:
    """One simulated IMU: noise, true calibration, and initial-estimate error."""

    noise: NoiseParams = field(default_factory=lambda: preset_noise("VN300", rate_hz=200.0))
    pos_m: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotvec_rad: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    init_error_std: InitErrorStd = field(default_factory=InitErrorStd)
    phase_s: float | None = None
    name: str = "VN300"

    def true_calibration(self, pinned=False):
        return ImuCalibration(
            np.asarray(self.pos_m, dtype=float).copy(),
            quat_from_rotvec(self.rotvec_rad),
            np.asarray(self.bias_accel, dtype=float).copy(),
            np.asarray(self.bias_gyro, dtype=float).copy(),
            pinned,
        )


@dataclass
class CameraSpec:
    model: CameraModel = field(default_factory=CameraModel)
    nx: int = 10
    ny: int = 10
    spacing_m: float = 0.5
    offset_m: float = 5.0

    def landmarks(self):
        return landmark_grid(self.nx, self.ny, self.spacing_m, self.offset_m)


def default_imus():
    """VN-300 at 200 Hz as IMU 0 plus a VN-100 at 100 Hz with a lever arm and tilt."""
    return [
        ImuSpec(preset_noise("VN300", rate_hz=200.0), name="VN300"),
        ImuSpec(
            preset_noise("VN100", rate_hz=100.0),
            pos_m=np.array([0.10, -0.05, 0.03]),
            rotvec_rad=np.array([0.05, -0.10, 0.20]),
            name="VN100",
        ),
    ]


@dataclass
class SimConfig:
    seed: int = 0
    duration_s: float = 60.0
    trajectory: TrajectoryBounds = field(default_factory=TrajectoryBounds)
    imus: list = field(default_factory=default_imus)
    camera: CameraSpec | None = field(default_factory=CameraSpec)
    mode: str = "multi_update"
    calibrating: bool = True
    add_noise: bool = True
    accel_drive: float = 1.0
    rate_drive: float = 1e-4
    ang_accel_drive: float = 0.3
    output_rate_hz: float = 10.0
    gate: float | None = None
    check_covariance: bool = False

    def __post_init__(self):
        if not self.imus:
            raise ValueError("at least one IMU is required")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


# --------------------------------------------------------------------------- sensors


def imu_truth(traj, t, p_bi, q_bi):
    """Noise-free specific force and angular rate sensed by an IMU, vectorised over ``t``.

    The accelerometer's global position is ``p + C(q_GB) p_BI``; its acceleration is
    formed in the global frame and rotated into the sensor frame.
    """
    s = traj.body_states(t)
    w, al = s["w"], s["alpha"]
    p_bi = np.broadcast_to(p_bi, w.shape)
    lever_b = np.cross(al, p_bi) + np.cross(w, np.cross(w, p_bi))
    R = np.array([quat_to_rot(q) for q in s["q"]])  # (n, 3, 3)
    f_global = s["a"] + np.einsum("nij,nj->ni", R, lever_b)
    RC = R @ quat_to_rot(q_bi)
    acc = np.einsum("nji,nj->ni", RC, f_global)
    gyro = w @ quat_to_rot(q_bi)
    return acc, gyro


def _stream_times(rate_hz, phase_s, duration_s):
    n = int(np.floor((duration_s - phase_s) * rate_hz + 1e-9)) + 1
    return phase_s + np.arange(n) / rate_hz


def imu_stream(traj, spec, imu_id, duration_s, rng, add_noise=True, phase_s=0.0):
    """All samples of one IMU, with white noise and bias random walks."""
    noise = spec.noise
    t = _stream_times(noise.rate_hz, phase_s, duration_s)
    cal = spec.true_calibration()
    acc, gyro = imu_truth(traj, t, cal.p, cal.q)
    n = len(t)
    b_a = np.tile(cal.b_a, (n, 1))
    b_w = np.tile(cal.b_w, (n, 1))
    if add_noise:
        step = np.sqrt(1.0 / noise.rate_hz)
        b_a = b_a + np.vstack((np.zeros(3), np.cumsum(rng.standard_normal((n - 1, 3)) * noise.accel_bias_rw * step, 0)))
        b_w = b_w + np.vstack((np.zeros(3), np.cumsum(rng.standard_normal((n - 1, 3)) * noise.gyro_bias_rw * step, 0)))
        acc = acc + rng.standard_normal((n, 3)) * noise.accel_std
        gyro = gyro + rng.standard_normal((n, 3)) * noise.gyro_std
    R = noise.measurement_cov()
    samples = [ImuSample(float(t[k]), acc[k] + b_a[k], gyro[k] + b_w[k], imu_id, R) for k in range(n)]
    return samples, t, b_a, b_w


def sample_imu(traj, t, true_calib, noise, rng, imu_id=0, add_noise=True):
    """Single IMU sample at time ``t`` (biases held at their given values)."""
    acc, gyro = imu_truth(traj, np.array([t]), true_calib.p, true_calib.q)
    acc, gyro = acc[0] + true_calib.b_a, gyro[0] + true_calib.b_w
    if add_noise:
        acc = acc + rng.standard_normal(3) * noise.accel_std
        gyro = gyro + rng.standard_normal(3) * noise.gyro_std
    return ImuSample(float(t), acc, gyro, imu_id, noise.measurement_cov())


def camera_stream(traj, spec, duration_s, rng, add_noise=True, phase_s=0.0):
    cam = spec.model
    L = spec.landmarks()
    t = _stream_times(cam.rate_hz, phase_s, duration_s)
    s = traj.body_states(t)
    C_T = quat_to_rot(cam.q_BC).T
    w, h = cam.resolution
    frames = []
    for k in range(len(t)):
        R_T = quat_to_rot(s["q"][k]).T
        pc = ((L - s["p"][k]) @ R_T.T - cam.p_BC) @ C_T.T
        front = pc[:, 2] > 0.1
        uv = np.full((len(L), 2), np.nan)
        uv[front] = cam.f_px * pc[front, :2] / pc[front, 2:3] + cam.c
        if add_noise:
            uv = uv + rng.standard_normal(uv.shape) * cam.pixel_noise_std
        ok = front & (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
        ids = np.flatnonzero(ok)
        frames.append(CameraSample(float(t[k]), ids, uv[ids]))
    return frames


# --------------------------------------------------------------------------- runs


@dataclass
class RunRecord:
    """Time series of one simulated run at a uniform output rate.

    Calibration arrays are (n_epochs, n_imus, 12) ordered ``[pos, ori, b_a, b_w]``;
    errors are truth minus estimate (orientation as a local rotation vector).
    """

    run_id: int
    seed: int
    mode: str
    n_imus: int
    t: np.ndarray
    p_true: np.ndarray
    p_est: np.ndarray
    q_true: np.ndarray
    q_est: np.ndarray
    v_true: np.ndarray
    v_est: np.ndarray
    pose_err: np.ndarray  # (n, 6) [dp, dtheta]
    pose_cov: np.ndarray  # (n, 6, 6)
    cal_err: np.ndarray
    cal_sigma: np.ndarray
    cal_init_std: np.ndarray  # (n_imus, 12)
    cal_active: np.ndarray  # (n_imus, 12) bool, estimated components
    residuals: np.ndarray  # (n, n_imus, 6), latest IMU innovation per sensor
    diverged: bool = False
    failure: str = ""
    n_updates: int = 0
    n_dropped: int = 0
    min_eig: float = float("nan")


def _run_seeds(seed):
    ss = np.random.SeedSequence(seed)
    traj_ss, init_ss, sensor_ss = ss.spawn(3)
    return int(traj_ss.generate_state(1)[0]), np.random.default_rng(init_ss), sensor_ss


def _phase(spec, i):
    if spec.phase_s is not None:
        return spec.phase_s
    # distinct, deterministic clock offsets within one sample period
    return (0.37 * i % 1.0) / spec.noise.rate_hz


def _cal_error(true_cal, est_cal):
    return np.concatenate(
        (true_cal.p - est_cal.p, quat_boxminus(true_cal.q, est_cal.q), true_cal.b_a - est_cal.b_a, true_cal.b_w - est_cal.b_w)
    )


def run_single(cfg, run_id=0, trajectory=None):
    """Simulate one run of ``cfg`` and return its :class:`RunRecord`."""
    traj_seed, init_rng, sensor_ss = _run_seeds(cfg.seed)
    traj = trajectory if trajectory is not None else gen_trajectory(traj_seed, cfg.trajectory)
    n_imus = len(cfg.imus)
    # child 0 drives the camera and child i + 1 IMU i, so runs that differ only in
    # their IMU count still share the camera noise and the leading IMU streams
    cam_rng, *imu_rngs = [np.random.default_rng(s) for s in sensor_ss.spawn(n_imus + 1)]

    if np.any(np.asarray(cfg.imus[0].pos_m) != 0) or np.any(np.asarray(cfg.imus[0].rotvec_rad) != 0):
        raise ValueError("IMU 0 defines the body frame; its extrinsics must be zero")
    true_cals = [spec.true_calibration(pinned=(i == 0)) for i, spec in enumerate(cfg.imus)]

    # initial estimate: body exact, calibration perturbed
    est_cals, init_std = [], np.zeros((n_imus, 12))
    active = np.zeros((n_imus, 12), dtype=bool)
    for i, (spec, cal) in enumerate(zip(cfg.imus, true_cals)):
        e = spec.init_error_std
        std = np.repeat([e.pos_m, e.ang_rad, e.ba, e.bw], 3).astype(float)
        if i == 0:
            std[:6] = 0.0
        draw = init_rng.standard_normal(12) * std
        est_cals.append(
            ImuCalibration(
                cal.p - draw[0:3],
                quat_mul(cal.q, quat_from_rotvec(-draw[3:6])),
                cal.b_a - draw[6:9],
                cal.b_w - draw[9:12],
                cal.pinned,
            )
        )
        init_std[i] = std
        active[i] = True
        if i == 0:
            active[i, :6] = False

    streams = []
    for i, spec in enumerate(cfg.imus):
        samples, _, b_a_true, b_w_true = imu_stream(
            traj, spec, i, cfg.duration_s, imu_rngs[i], cfg.add_noise, _phase(spec, i)
        )
        streams.append((samples, b_a_true, b_w_true))
    frames = []
    landmarks = None
    if cfg.camera is not None:
        landmarks = cfg.camera.landmarks()
        frames = camera_stream(traj, cfg.camera, cfg.duration_s, cam_rng, cfg.add_noise,
                               phase_s=0.5 / cfg.camera.model.rate_hz)

    out_t = np.arange(0.0, cfg.duration_s + 1e-9, 1.0 / cfg.output_rate_hz)
    truth = traj.body_states(out_t)
    if cfg.mode == "multi_update":
        rec = _run_multi(cfg, traj, true_cals, est_cals, init_std, streams, frames, landmarks, out_t, truth)
    else:
        rec = _run_single_predictor(cfg, traj, true_cals, est_cals, init_std, streams, frames, landmarks, out_t, truth)
    rec.run_id = run_id
    rec.cal_init_std = init_std[: rec.n_imus]
    rec.cal_active = active[: rec.n_imus]
    if cfg.mode == "single_predictor":
        rec.cal_active[0, :6] = False
    elif not cfg.calibrating:
        rec.cal_active[:] = False
    return rec


def _events(streams, frames):
    """Timestamp-ordered merge of all sensor streams; ties broken by sensor index."""
    iters = [((s.t, i, k, s) for k, s in enumerate(samples)) for i, (samples, _, _) in enumerate(streams)]
    iters.append(((f.t, len(streams), k, f) for k, f in enumerate(frames)))
    for _, sensor, k, ev in heapq.merge(*iters, key=lambda e: (e[0], e[1], e[2])):
        yield sensor, k, ev


def _allocate(n_out, n_imus):
    return dict(
        p_est=np.full((n_out, 3), np.nan),
        q_est=np.full((n_out, 4), np.nan),
        v_est=np.full((n_out, 3), np.nan),
        pose_err=np.full((n_out, 6), np.nan),
        pose_cov=np.full((n_out, 6, 6), np.nan),
        cal_err=np.full((n_out, n_imus, 12), np.nan),
        cal_sigma=np.full((n_out, n_imus, 12), np.nan),
        residuals=np.full((n_out, n_imus, 6), np.nan),
    )


def _true_cal_series(streams, true_cals, out_t):
    """True calibration of every IMU at each output epoch (biases follow their random walk)."""
    series = []
    for i, cal in enumerate(true_cals):
        samples, b_a, b_w = streams[i]
        times = np.array([s.t for s in samples])
        idx = np.clip(np.searchsorted(times, out_t, side="right") - 1, 0, len(times) - 1)
        series.append((cal, b_a[idx], b_w[idx]))
    return series


def _run_multi(cfg, traj, true_cals, est_cals, init_std, streams, frames, landmarks, out_t, truth):
    n_imus = len(true_cals)
    body0 = traj.state(0.0)
    P0 = np.zeros((error_dim(n_imus), error_dim(n_imus)))
    body_var = np.array([0, 0, 1.0, 0, 0.1, 1.0])
    for k in range(6):
        P0[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = np.eye(3) * body_var[k]
    for i in range(n_imus):
        o = BODY_DIM + 12 * i
        P0[o : o + 12, o : o + 12] = np.diag(init_std[i] ** 2)
    x0 = make_state(est_cals, body=body0, P=P0, t=0.0)
    pn = ProcessNoise.from_imus([s.noise for s in cfg.imus], cfg.accel_drive, cfg.rate_drive, cfg.ang_accel_drive)
    cam = cfg.camera.model if cfg.camera is not None else None
    filt = MultiImuFilter(x0, pn, cfg.calibrating, cam, landmarks, cfg.gate, cfg.check_covariance)

    arrays = _allocate(len(out_t), n_imus)
    true_series = _true_cal_series(streams, true_cals, out_t)
    last_resid = np.full((n_imus, 6), np.nan)
    diverged, failure = False, ""
    k_out = 0

    def record(k):
        x = filt.state_at(out_t[k])
        b = x.body
        arrays["p_est"][k] = b.p
        arrays["q_est"][k] = b.q
        arrays["v_est"][k] = b.v
        arrays["pose_err"][k, :3] = truth["p"][k] - b.p
        arrays["pose_err"][k, 3:] = quat_boxminus(truth["q"][k], b.q)
        idx = np.r_[P, TH]
        arrays["pose_cov"][k] = x.P[np.ix_(idx, idx)]
        sd = np.sqrt(np.clip(np.diag(x.P), 0.0, None))
        for i in range(n_imus):
            cal, b_a, b_w = true_series[i]
            tc = ImuCalibration(cal.p, cal.q, b_a[k], b_w[k], cal.pinned)
            arrays["cal_err"][k, i] = _cal_error(tc, x.imus[i])
            sp, _, _, sbw = imu_slices(i)
            arrays["cal_sigma"][k, i] = sd[sp.start : sbw.stop]
        arrays["residuals"][k] = last_resid

    try:
        for sensor, _, ev in _events(streams, frames):
            while k_out < len(out_t) and out_t[k_out] < ev.t:
                record(k_out)
                k_out += 1
            if sensor < n_imus:
                filt.process_imu(ev)
                if sensor in filt.innovations:
                    last_resid[sensor] = filt.innovations[sensor]
            else:
                filt.process_camera(ev)
            if not filt.is_finite():
                raise FilterDivergence(f"non-finite state at t={ev.t:.6f}")
        while k_out < len(out_t):
            record(k_out)
            k_out += 1
    except FilterDivergence as exc:
        diverged, failure = True, str(exc)
        log.warning("run seed=%d diverged: %s", cfg.seed, exc)

    return RunRecord(
        run_id=0, seed=cfg.seed, mode=cfg.mode, n_imus=n_imus, t=out_t,
        p_true=truth["p"], q_true=truth["q"], v_true=truth["v"],
        cal_init_std=init_std, cal_active=None, diverged=diverged, failure=failure,
        n_updates=filt.n_updates, n_dropped=filt.n_dropped,
        min_eig=float(filt.min_eig) if cfg.check_covariance else float("nan"),
        **arrays,
    )


def _run_single_predictor(cfg, traj, true_cals, est_cals, init_std, streams, frames, landmarks, out_t, truth):
    if cfg.camera is None:
        raise ValueError("single_predictor mode needs a camera")
    body0 = traj.state(0.0)
    P0 = np.zeros((15, 15))
    P0[9:12, 9:12] = np.diag(init_std[0, 6:9] ** 2)
    P0[12:15, 12:15] = np.diag(init_std[0, 9:12] ** 2)
    x0 = PredictorState(body0.p, body0.v, body0.q, est_cals[0].b_a.copy(), est_cals[0].b_w.copy(), P0, 0.0)
    filt = SinglePredictorEKF(x0, cfg.imus[0].noise, cfg.camera.model, landmarks)

    arrays = _allocate(len(out_t), 1)
    true_series = _true_cal_series(streams[:1], true_cals[:1], out_t)
    diverged, failure = False, ""
    k_out = 0
    n_updates = 0

    def record(k):
        x = filt.pose_at(out_t[k])
        arrays["p_est"][k] = x.p
        arrays["q_est"][k] = x.q
        arrays["v_est"][k] = x.v
        arrays["pose_err"][k, :3] = truth["p"][k] - x.p
        arrays["pose_err"][k, 3:] = quat_boxminus(truth["q"][k], x.q)
        idx = np.r_[0:3, 6:9]
        arrays["pose_cov"][k] = x.P[np.ix_(idx, idx)]
        cal, b_a, b_w = true_series[0]
        err = np.zeros(12)
        err[6:9] = b_a[k] - x.b_a
        err[9:12] = b_w[k] - x.b_w
        sd = np.zeros(12)
        sd[6:] = np.sqrt(np.clip(np.diag(x.P)[9:15], 0.0, None))
        arrays["cal_err"][k, 0] = err
        arrays["cal_sigma"][k, 0] = sd

    try:
        for sensor, _, ev in _events(streams[:1], frames):
            while k_out < len(out_t) and out_t[k_out] < ev.t:
                record(k_out)
                k_out += 1
            if sensor == 0:
                filt.process_imu(ev)
            else:
                filt.process_camera(ev)
                n_updates += 1
            if not filt.is_finite():
                raise FilterDivergence(f"non-finite state at t={ev.t:.6f}")
        while k_out < len(out_t):
            record(k_out)
            k_out += 1
    except FilterDivergence as exc:
        diverged, failure = True, str(exc)
        log.warning("baseline run seed=%d diverged: %s", cfg.seed, exc)

    return RunRecord(
        run_id=0, seed=cfg.seed, mode=cfg.mode, n_imus=1, t=out_t,
        p_true=truth["p"], q_true=truth["q"], v_true=truth["v"],
        cal_init_std=init_std, cal_active=None, diverged=diverged, failure=failure,
        n_updates=n_updates, n_dropped=0, **arrays,
    )


# --------------------------------------------------------------------------- campaigns


def run_seeds(master_seed, n_runs):
    """Per-run seeds derived from the master seed (independent of worker count)."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    children = np.random.SeedSequence(master_seed).spawn(n_runs)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def worker_count(n_runs):
    """Parallel runs allowed: ``MIMU_THREADS`` if set, else the CPU count, capped at ``n_runs``."""
    env = os.environ.get("MIMU_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"MIMU_THREADS must be an integer, got {env!r}") from exc
    else:
        n = os.cpu_count() or 1
    return max(1, min(n, n_runs))


def _campaign_job(args):
    cfg, run_id = args
    return run_single(cfg, run_id=run_id)


@dataclass
class CampaignResult:
    records: list
    seeds: list

    @property
    def n_diverged(self):
        return sum(r.diverged for r in self.records)


def run_monte_carlo(cfg, n_runs, workers=None, progress=None):
    """Run ``n_runs`` independent simulations of ``cfg``.

    Run ``k`` uses ``cfg`` with its seed replaced by the ``k``-th child of the master
    seed, so results do not depend on ``workers``. Records are returned in run order.
    """
    seeds = run_seeds(cfg.seed, n_runs)
    jobs = [(replace(cfg, seed=s), k) for k, s in enumerate(seeds)]
    workers = worker_count(n_runs) if workers is None else max(1, min(int(workers), n_runs))
    records = []
    if workers == 1:
        for job in jobs:
            records.append(_campaign_job(job))
            if progress is not None:
                progress(len(records), n_runs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_campaign_job, jobs):
                records.append(rec)
                if progress is not None:
                    progress(len(records), n_runs)
    return CampaignResult(records, seeds)
