"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The 100-run campaign is simulated once and shared by the convergence, consistency and
divergence checks. Expect roughly ten minutes on one core.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from mimu import cli
from mimu.camera import CameraModel, project_pose, projection_jacobian
from mimu.evaluation import calibration_convergence, rmse, summarize_run
from mimu.imu_update import compute_H_body, compute_H_calib, predict_imu_measurement
from mimu.observability import analyze
from mimu.propagation import compute_F, predict_state
from mimu.sim import ImuSpec, InitErrorStd, SimConfig, default_imus, run_monte_carlo, run_seeds, run_single
from mimu.state import BODY_DIM, imu_offset, preset_noise
from oracles import central_jacobian, difference, inject, oplus, random_state, rot, scaled_error

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    """Print ``PASS``/``FAIL`` for a criterion outside pytest's capture, then assert."""

    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


# --------------------------------------------------------------------------- 1


def test_observability_deficiency(verdict):
    t0 = time.perf_counter()
    parts, ok = [], True
    for n in (1, 2, 3):
        imu_only = analyze(n, with_camera=False, seed=n)
        with_cam = analyze(n, with_camera=True, seed=n)
        ok &= imu_only.adjusted_deficiency == 6 and with_cam.adjusted_deficiency == 0
        parts.append(
            f"N={n}: {imu_only.adjusted_deficiency}/{with_cam.adjusted_deficiency} "
            f"(raw rank {imu_only.rank}/{with_cam.rank} of {imu_only.state_dim})"
        )
    dt = time.perf_counter() - t0
    ok &= dt < 10.0
    verdict(1, ok, "deficiency IMU-only/camera on free states " + ", ".join(parts) + f"; {dt:.1f} s")


# --------------------------------------------------------------------------- 2


def _visible(rng, cam):
    while True:
        p = rng.normal(0, 1, 3)
        q = random_state(rng, 1).body.q
        uv = rng.uniform([0, 0], cam.resolution)
        pc = np.array([(uv[0] - cam.c[0]) / cam.f_px, (uv[1] - cam.c[1]) / cam.f_px, 1.0]) * rng.uniform(1, 10)
        L = p + rot(q).apply(rot(cam.q_BC).apply(pc) + cam.p_BC)
        if project_pose(p, q, cam, L) is not None:
            return p, q, L


def test_jacobians_match_finite_differences(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = {"F": 0.0, "H_body": 0.0, "H_calib": 0.0, "camera": 0.0}
    for _ in range(100):
        n = int(rng.integers(1, 4))
        x = random_state(rng, n)
        dt = float(rng.uniform(1e-3, 0.1))
        free = np.setdiff1d(np.arange(x.dim), x.pinned_indices())
        base = predict_state(x, dt)
        Ffd = central_jacobian(lambda e: difference(predict_state(inject(x, e), dt), base), x.dim)
        sub = np.ix_(free, free)
        worst["F"] = max(worst["F"], scaled_error(compute_F(x, dt)[sub], Ffd[sub]))

        i = int(rng.integers(n))
        Hfd = central_jacobian(lambda e: np.concatenate(predict_imu_measurement(inject(x, e), i)), x.dim)
        o = imu_offset(i)
        worst["H_body"] = max(worst["H_body"], scaled_error(compute_H_body(x, i), Hfd[:, :BODY_DIM]))
        worst["H_calib"] = max(worst["H_calib"], scaled_error(compute_H_calib(x, i), Hfd[:, o : o + 12]))

        cam = CameraModel(p_BC=rng.normal(0, 0.05, 3))
        p, q, L = _visible(rng, cam)

        def uv(e):
            pc = rot(cam.q_BC).inv().apply(rot(oplus(q, e[3:])).inv().apply(L - p - e[:3]) - cam.p_BC)
            return cam.f_px * pc[:2] / pc[2]

        worst["camera"] = max(worst["camera"], scaled_error(projection_jacobian(p, q, cam, L), central_jacobian(uv, 6)))
    dt = time.perf_counter() - t0
    ok = all(v < 1e-5 for v in worst.values()) and dt < 30.0
    verdict(2, ok, "worst relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {dt:.1f} s")


# --------------------------------------------------------------------------- 3


def test_noiseless_round_trip(verdict):
    t0 = time.perf_counter()
    zero = InitErrorStd(0.0, 0.0, 0.0, 0.0)
    imus = [replace(s, init_error_std=zero) for s in default_imus()]
    rec = run_single(SimConfig(seed=0, duration_s=30.0, add_noise=False, imus=imus))
    pos = np.linalg.norm(rec.pose_err[:, :3], axis=1).max()
    att = np.linalg.norm(rec.pose_err[:, 3:], axis=1).max()
    dt = time.perf_counter() - t0
    ok = not rec.diverged and pos < 1e-3 and att < 1e-4 and dt < 10.0
    verdict(3, ok, f"max position error {pos:.2e} m, max attitude error {att:.2e} rad; {dt:.1f} s")


# --------------------------------------------------------------------------- 4, 6, 7

LIMITS = {"pos": 5.0, "ori": 5.0, "ba": 10.0, "bw": 5.0}


@pytest.fixture(scope="module")
def campaign():
    t0 = time.perf_counter()
    res = run_monte_carlo(SimConfig(seed=2024, duration_s=60.0), 100)
    return res, time.perf_counter() - t0


def test_calibration_convergence(campaign, verdict):
    res, elapsed = campaign
    stats = {c.name: c for c in calibration_convergence(res.records)}
    ok = elapsed < 600.0 and set(stats) == set(LIMITS)
    parts = []
    for name, lim in LIMITS.items():
        c = stats[name]
        ok &= c.median_abs <= lim and c.std_reduction >= 5.0
        parts.append(f"{name} median {c.median_abs:.3g} {c.unit} (<= {lim:g}), std x{c.std_reduction:.0f} smaller")
    verdict(4, ok, "; ".join(parts) + f"; {len(res.records)} runs in {elapsed:.0f} s")


def test_consistency(campaign, verdict):
    res, _ = campaign
    stats = calibration_convergence(res.records)
    cover = np.concatenate([c.final_coverage for c in stats])
    nees = np.array([summarize_run(r).nees_mean for r in res.records if not r.diverged])
    mean_nees = float(np.mean(nees))
    ok = bool(np.all(cover >= 0.90)) and 4.0 <= mean_nees <= 9.0
    verdict(6, ok, f"min final 3-sigma coverage {cover.min():.2f} over 12 components, mean body NEES {mean_nees:.2f}")


def test_covariance_health(campaign, verdict):
    res, _ = campaign
    rec = run_single(SimConfig(seed=31, duration_s=60.0, check_covariance=True))
    ok = not rec.diverged and rec.min_eig >= -1e-9 and res.n_diverged == 0
    verdict(7, ok, f"checked run: {rec.n_updates} updates, min eigenvalue {rec.min_eig:.2e}, "
                   f"diverged={rec.diverged}; campaign divergences {res.n_diverged}/100")


# --------------------------------------------------------------------------- 5


def test_multi_imu_benefit(verdict):
    t0 = time.perf_counter()
    third = ImuSpec(preset_noise("VN100", rate_hz=100.0), pos_m=np.array([-0.08, 0.06, -0.04]),
                    rotvec_rad=np.array([-0.1, 0.05, -0.15]), name="VN100")
    setups = {
        "baseline": dict(mode="single_predictor", imus=default_imus()[:1]),
        "2-IMU": dict(mode="multi_update", imus=default_imus()),
        "3-IMU": dict(mode="multi_update", imus=default_imus() + [third]),
    }
    err = {k: [] for k in setups}
    for seed in run_seeds(55, 20):
        for name, kw in setups.items():
            rec = run_single(SimConfig(seed=seed, duration_s=60.0, **kw))
            err[name].append(np.inf if rec.diverged else rmse(rec.p_true, rec.p_est))
    med = {k: float(np.median(v)) * 1e3 for k, v in err.items()}
    dt = time.perf_counter() - t0
    ok = med["2-IMU"] < med["baseline"] and med["3-IMU"] <= med["2-IMU"] and dt < 300.0
    verdict(5, ok, "median position RMSE " + ", ".join(f"{k} {v:.2f} mm" for k, v in med.items()) + f"; {dt:.0f} s")


# --------------------------------------------------------------------------- 8


def test_montecarlo_output_is_deterministic(tmp_path, verdict):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("duration_s: 10\nseed: 5\n")
    trees = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli.main(["montecarlo", str(cfg), "--runs", "3", "-o", str(out)]) == 0
        trees.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    same = trees[0] == trees[1]
    verdict(8, same and len(trees[0]) == 11, f"{len(trees[0])} files compared, identical={same}")
