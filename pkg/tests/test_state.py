import numpy as np
import pytest

from mimu import state as S
from mimu.so3 import IDENTITY_QUAT
from oracles import difference, inject, random_state

G0 = 9.80665


@pytest.mark.parametrize(
    "name, accel_mg, gyro_mrad",
    [("VN300", 0.14, 0.061), ("VN-100", 0.14, 0.061), ("deta10", 40.0, 0.049)],
)
def test_presets_expand_to_si_densities(name, accel_mg, gyro_mrad):
    n = S.preset_noise(name, rate_hz=400)
    assert n.accel_density == pytest.approx(accel_mg * 1e-3 * G0, rel=1e-12)
    assert n.gyro_density == pytest.approx(gyro_mrad * 1e-3, rel=1e-12)
    assert n.accel_std == pytest.approx(n.accel_density * 20.0)


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown IMU preset"):
        S.preset_noise("ADIS16448")


@pytest.mark.parametrize("field", ["accel_density", "gyro_density", "accel_bias_rw", "gyro_bias_rw", "rate_hz"])
def test_noise_params_reject_non_positive(field):
    kw = dict(accel_density=1e-3, gyro_density=1e-4)
    kw[field] = 0.0
    with pytest.raises(ValueError, match=field):
        S.NoiseParams(**kw)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_error_dim_and_slices(n):
    assert S.error_dim(n) == 18 + 12 * n
    sp, sth, sba, sbw = S.imu_slices(n - 1)
    assert sbw.stop == S.error_dim(n)
    assert sp.start == S.imu_offset(n - 1)


def test_pinned_imu_must_be_at_origin():
    with pytest.raises(ValueError):
        S.ImuCalibration(np.array([0.1, 0, 0]), IDENTITY_QUAT.copy(), pinned=True)


def test_inject_matches_oracle(rng):
    x = random_state(rng, 3)
    dx = rng.normal(0, 0.05, x.dim)
    got = S.inject_error(x, dx)
    want = inject(x, dx)
    assert np.max(np.abs(difference(got, want))) < 1e-12
    # pinned extrinsics never move
    np.testing.assert_array_equal(got.imus[0].p, np.zeros(3))
    np.testing.assert_array_equal(got.imus[0].q, IDENTITY_QUAT)


def test_inject_rejects_wrong_length(rng):
    x = random_state(rng, 2)
    with pytest.raises(ValueError, match="shape"):
        S.inject_error(x, np.zeros(x.dim + 1))


def test_initial_covariance_pins_imu0():
    imus = [S.ImuCalibration(pinned=True), S.ImuCalibration()]
    P = S.initial_covariance(imus)
    o = S.imu_offset(0)
    assert not P[o : o + 6].any() and not P[:, o : o + 6].any()
    assert P[S.imu_offset(1), S.imu_offset(1)] == pytest.approx(0.02**2)


def test_check_covariance(rng):
    A = rng.normal(size=(6, 6))
    P = A @ A.T
    assert S.check_covariance(P) > 0
    bad = P.copy()
    bad[0, 1] += 1e-6
    with pytest.raises(ValueError, match="asymmetry"):
        S.check_covariance(bad)
    with pytest.raises(ValueError, match="eigenvalue"):
        S.check_covariance(-np.eye(3))
