import numpy as np
import pytest

from mimu import imu_update as U
from mimu.propagation import ProcessNoise
from mimu.state import BODY_DIM, imu_offset
from oracles import central_jacobian, imu_measurement, inject, random_state, scaled_error


def h(x, i):
    return np.concatenate(U.predict_imu_measurement(x, i))


@pytest.mark.parametrize("seed", range(8))
def test_measurement_matches_first_principles(seed):
    x = random_state(np.random.default_rng(seed), 3)
    for i in range(3):
        np.testing.assert_allclose(h(x, i), imu_measurement(x, i), atol=1e-12)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("i", [0, 1, 2])
def test_jacobians_match_finite_differences(seed, i):
    x = random_state(np.random.default_rng(seed), 3)
    J = central_jacobian(lambda e: h(inject(x, e), i), x.dim)
    assert scaled_error(U.compute_H_body(x, i), J[:, :BODY_DIM]) < 1e-6
    o = imu_offset(i)
    assert scaled_error(U.compute_H_calib(x, i), J[:, o : o + 12]) < 1e-6
    # other IMUs' columns do not enter
    full = U.imu_jacobian(x, i, calibrating=True)
    mask = np.ones(x.dim, bool)
    mask[:BODY_DIM] = False
    mask[o : o + 12] = False
    assert not full[:, mask].any()


def test_pinned_extrinsic_columns_zero(rng):
    x = random_state(rng, 2)
    H = U.compute_H_calib(x, 0)
    assert not H[:, :6].any()
    np.testing.assert_array_equal(H[:3, 6:9], np.eye(3))


def test_not_calibrating_drops_calibration_columns(rng):
    x = random_state(rng, 2)
    H = U.imu_jacobian(x, 1, calibrating=False)
    assert not H[:, BODY_DIM:].any()


def test_index_checked(rng):
    x = random_state(rng, 2)
    with pytest.raises(IndexError):
        U.predict_imu_measurement(x, 2)


def test_update_matches_textbook_form(rng):
    x = random_state(rng, 2)
    H = U.imu_jacobian(x, 1, True)
    R = np.diag(rng.uniform(0.01, 0.1, 6))
    r = rng.normal(0, 0.1, 6)
    y, d2 = U.ekf_update(x, H, r, R)
    S = H @ x.P @ H.T + R
    K = x.P @ H.T @ np.linalg.inv(S)
    np.testing.assert_allclose(y.P, (np.eye(x.dim) - K @ H) @ x.P, atol=1e-10)
    assert d2 == pytest.approx(r @ np.linalg.solve(S, r))
    np.testing.assert_allclose(y.body.p, x.body.p + (K @ r)[:3], atol=1e-12)


def test_gate_rejects_outlier(rng):
    x = random_state(rng, 1)
    H = U.imu_jacobian(x, 0, True)
    y, d2 = U.ekf_update(x, H, np.full(6, 1e3), np.eye(6) * 1e-4, gate=U.CHI2_95_6DOF)
    assert d2 > U.CHI2_95_6DOF and y is x


def test_singular_innovation_raises(rng):
    x = random_state(rng, 1)
    x.P = np.zeros_like(x.P)
    with pytest.raises(U.FilterDivergence):
        U.ekf_update(x, U.imu_jacobian(x, 0, True), np.zeros(6), np.zeros((6, 6)))


def test_stale_sample_dropped(rng):
    x = random_state(rng, 1)
    z = U.ImuSample(x.t - 0.01, np.zeros(3), np.zeros(3), 0, np.eye(6))
    assert U.process_imu(x, z, ProcessNoise(), True) is x


def test_perfect_sample_barely_moves_state(rng):
    x = random_state(rng, 2)
    a, w = U.predict_imu_measurement(x, 1)
    z = U.ImuSample(x.t, a, w, 1, np.eye(6) * 1e-4)
    y = U.process_imu(x, z, ProcessNoise(), True)
    np.testing.assert_allclose(y.body.p, x.body.p, atol=1e-12)
    assert np.trace(y.P) < np.trace(x.P)
