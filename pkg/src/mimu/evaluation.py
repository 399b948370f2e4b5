"""Error metrics and calibration-convergence statistics for simulated runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .so3 import quat_to_rot

RPE_WINDOWS_S = (1.0, 5.0)
FINAL_FRACTION = 0.05

# calibration parameter classes: slice into the 12-vector and scale to report units
CAL_CLASSES = {
    "pos": (slice(0, 3), 1e3),  # mm
    "ori": (slice(3, 6), 1e3),  # mrad
    "ba": (slice(6, 9), 1e3),  # mm/s^2
    "bw": (slice(9, 12), 1e3),  # mrad/s
}
CAL_UNITS = {"pos": "mm", "ori": "mrad", "ba": "mm/s^2", "bw": "mrad/s"}
CAL_COMPONENTS = [f"{c}_{ax}" for c in CAL_CLASSES for ax in "xyz"]

SUMMARY_COLUMNS = [
    "run_id", "mode", "n_imus", "rmse_pos_m", "rpe_1s_m", "rpe_5s_m", "nees_mean",
    "cal_pos_err_mm", "cal_ori_err_mrad", "cal_ba_err_mm_s2", "cal_bw_err_mrad_s",
    "sigma3_coverage", "diverged",
]


def rmse(p_true, p_est):
    """Root-mean-square position error ``sqrt(mean ||p_est - p_true||^2)``."""
    p_true = np.asarray(p_true, dtype=float)
    p_est = np.asarray(p_est, dtype=float)
    if p_true.shape != p_est.shape:
        raise ValueError(f"length mismatch: {p_true.shape} vs {p_est.shape}")
    if len(p_true) == 0:
        raise ValueError("empty series")
    d = p_est - p_true
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))


@dataclass
class RpeSummary:
    window_s: float
    n_pairs: int
    rms: float
    mean: float
    max: float


def _rotations(q):
    return np.array([quat_to_rot(qk) for qk in q])


def relative_translation_errors(t, p_true, q_true, p_est, q_est, window_s):
    """Translation error of the relative transform over every window of ``window_s``.

    For each start epoch ``i`` and end ``j = i + window``, the relative transform
    ``T_i^{-1} T_j`` is formed for truth and estimate; the error is the translation of
    ``(T_rel_true)^{-1} T_rel_est``. Timestamps must be uniform.
    """
    t = np.asarray(t, dtype=float)
    n = len(t)
    if n < 2:
        raise ValueError("need at least two epochs")
    dt = (t[-1] - t[0]) / (n - 1)
    step = int(round(window_s / dt))
    if step < 1 or step >= n:
        raise ValueError(f"window {window_s} s does not fit a series of {t[-1] - t[0]:.3f} s")
    Rt, Re = _rotations(q_true), _rotations(q_est)
    p_true, p_est = np.asarray(p_true, float), np.asarray(p_est, float)
    i, j = np.arange(n - step), np.arange(step, n)
    rel_true = np.einsum("nki,nk->ni", Rt[i], p_true[j] - p_true[i])
    rel_est = np.einsum("nki,nk->ni", Re[i], p_est[j] - p_est[i])
    R_rel_true = np.einsum("nki,nkj->nij", Rt[i], Rt[j])
    return np.linalg.norm(np.einsum("nki,nk->ni", R_rel_true, rel_est - rel_true), axis=1)


def rpe(t, p_true, q_true, p_est, q_est, window_s=1.0):
    """Relative pose error (translation) over windows of ``window_s`` seconds."""
    e = relative_translation_errors(t, p_true, q_true, p_est, q_est, window_s)
    return RpeSummary(window_s, len(e), float(np.sqrt(np.mean(e**2))), float(e.mean()), float(e.max()))


def nees(err, P):
    """Normalised estimation error squared ``e^T P^-1 e``.

    ``err`` is (..., k) and ``P`` (..., k, k); one value per leading index.
    """
    err = np.asarray(err, dtype=float)
    P = np.asarray(P, dtype=float)
    if P.shape[-2:] != (err.shape[-1], err.shape[-1]):
        raise ValueError(f"covariance {P.shape} does not match error {err.shape}")
    try:
        sol = np.linalg.solve(P, err[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular covariance block") from exc
    out = np.sum(err * sol, axis=-1)
    return float(out) if out.ndim == 0 else out


def nees_series(pose_err, pose_cov):
    """NEES per epoch; epochs whose covariance is not positive definite give NaN.

    The body starts at truth with zero pose covariance, so the first epoch is always
    excluded.
    """
    pose_cov = np.asarray(pose_cov, dtype=float)
    out = np.full(len(pose_err), np.nan)
    finite = np.all(np.isfinite(pose_cov), axis=(1, 2))
    ok = np.zeros(len(pose_err), dtype=bool)
    ok[finite] = np.linalg.eigvalsh(pose_cov[finite])[:, 0] > 0.0
    if ok.any():
        out[ok] = nees(np.asarray(pose_err)[ok], pose_cov[ok])
    return out


def _final_slice(n):
    k = max(1, int(np.ceil(FINAL_FRACTION * n)))
    return slice(n - k, n)


def final_calibration_error(rec):
    """Calibration error averaged over the last 5% of epochs, (n_imus, 12), SI units."""
    return np.mean(rec.cal_err[_final_slice(len(rec.t))], axis=0)


def sigma3_inside(rec):
    """Boolean (n, n_imus, 12): error inside its 3-sigma envelope."""
    return np.abs(rec.cal_err) <= 3.0 * rec.cal_sigma


@dataclass
class MetricSummary:
    """Per-run metrics; calibration errors are RMS over estimated components, report units."""

    run_id: int
    mode: str
    n_imus: int
    rmse_pos_m: float
    rpe_1s_m: float
    rpe_5s_m: float
    nees_mean: float
    cal_pos_err_mm: float
    cal_ori_err_mrad: float
    cal_ba_err_mm_s2: float
    cal_bw_err_mrad_s: float
    sigma3_coverage: float
    diverged: bool

    def row(self):
        return [getattr(self, c) for c in SUMMARY_COLUMNS]


def _nanmean(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else float("nan")


def summarize_run(rec):
    """:class:`MetricSummary` of one :class:`~mimu.sim.RunRecord`.

    Diverged runs carry NaN metrics. Coverage counts every (epoch, active component)
    pair; with no active component it is NaN.
    """
    nan = float("nan")
    if rec.diverged:
        return MetricSummary(rec.run_id, rec.mode, rec.n_imus, nan, nan, nan, nan, nan, nan, nan, nan, nan, True)
    windows = []
    for w in RPE_WINDOWS_S:
        try:
            windows.append(rpe(rec.t, rec.p_true, rec.q_true, rec.p_est, rec.q_est, w).rms)
        except ValueError:
            windows.append(nan)
    fin = final_calibration_error(rec)
    active = rec.cal_active
    cal = []
    for sl, scale in CAL_CLASSES.values():
        m = active[:, sl]
        cal.append(float(np.sqrt(np.mean(fin[:, sl][m] ** 2)) * scale) if m.any() else nan)
    inside = sigma3_inside(rec)[:, active]
    cover = float(inside.mean()) if inside.size else nan
    return MetricSummary(
        rec.run_id, rec.mode, rec.n_imus,
        rmse(rec.p_true, rec.p_est), windows[0], windows[1],
        _nanmean(nees_series(rec.pose_err, rec.pose_cov)),
        *cal, cover, False,
    )


@dataclass
class ClassStats:
    """Final-error statistics of one calibration parameter class across a campaign."""

    name: str
    unit: str
    mean: float
    std: float
    median_abs: float
    init_std: float
    std_reduction: float
    final_coverage: np.ndarray  # per component (3,), fraction of runs inside 3 sigma


def calibration_convergence(records):
    """Campaign statistics per parameter class in report units.

    Uses the estimated components of every non-diverged run. ``final_coverage`` is the
    per-component fraction of runs whose final-epoch error lies inside ``3 sigma``.
    """
    ok = [r for r in records if not r.diverged]
    out = []
    for name, (sl, scale) in CAL_CLASSES.items():
        finals, inits, inside = [], [], []
        for r in ok:
            act = r.cal_active[:, sl]
            if not act.any():
                continue
            finals.append(final_calibration_error(r)[:, sl][act])
            inits.append(r.cal_init_std[:, sl][act])
            last = sigma3_inside(r)[-1][:, sl]
            inside.append(np.where(act, last, np.nan))
        if not finals:
            continue
        f = np.concatenate(finals) * scale
        init = float(np.sqrt(np.mean(np.concatenate(inits) ** 2)) * scale)
        std = float(np.std(f))
        cover = np.nanmean(np.vstack(inside), axis=0) if inside else np.full(3, np.nan)
        out.append(
            ClassStats(name, CAL_UNITS[name], float(np.mean(f)), std, float(np.median(np.abs(f))),
                       init, init / std if std > 0 else float("inf"), cover)
        )
    return out


def convergence_series(records):
    """Mean error and mean 3-sigma bound across runs for every epoch, IMU and component.

    Returns ``(t, mean_err, mean_sigma3)`` with arrays shaped (n, n_imus, 12); inactive
    components are NaN.
    """
    ok = [r for r in records if not r.diverged]
    if not ok:
        raise ValueError("no completed runs")
    t = ok[0].t
    err = np.stack([np.where(r.cal_active, r.cal_err, np.nan) for r in ok])
    sig = np.stack([np.where(r.cal_active, r.cal_sigma, np.nan) for r in ok])
    return t, np.mean(err, axis=0), 3.0 * np.mean(sig, axis=0)
