import numpy as np
import pytest
from scipy.linalg import expm

from mimu import propagation as prop
from mimu.state import AL, A, G_GLOBAL, TH, V, W, P, BodyState, ImuCalibration, NoiseParams, make_state
from oracles import central_jacobian, difference, inject, random_state, scaled_error


def fd_F(x, dt):
    base = prop.predict_state(x, dt)
    return central_jacobian(lambda e: difference(prop.predict_state(inject(x, e), dt), base), x.dim)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("dt", [1e-3, 0.05, 0.5])
def test_F_matches_finite_differences(seed, dt):
    x = random_state(np.random.default_rng(seed), n_imus=2)
    # pinned extrinsics never move, so their rows and columns carry no information
    free = np.setdiff1d(np.arange(x.dim), x.pinned_indices())
    sub = np.ix_(free, free)
    assert scaled_error(prop.compute_F(x, dt)[sub], fd_F(x, dt)[sub]) < 1e-6


def test_constant_acceleration_is_exact(rng):
    x = random_state(rng, 1)
    dt = 0.37
    y = prop.predict_state(x, dt)
    acc = x.body.a + G_GLOBAL
    np.testing.assert_allclose(y.body.p, x.body.p + x.body.v * dt + 0.5 * acc * dt**2, rtol=1e-14)
    np.testing.assert_allclose(y.body.v, x.body.v + acc * dt, rtol=1e-14)
    np.testing.assert_array_equal(y.body.a, x.body.a)
    assert y.t == pytest.approx(x.t + dt)


def test_level_rest_stays_at_rest():
    x = make_state([ImuCalibration(pinned=True)], body=BodyState())
    y = prop.predict_state(x, 1.0)
    np.testing.assert_allclose(y.body.p, 0, atol=1e-15)
    np.testing.assert_allclose(y.body.v, 0, atol=1e-15)


@pytest.mark.parametrize("dt", [-1e-3, prop.MAX_DT + 1e-9, np.nan])
def test_dt_guards(dt, rng):
    x = random_state(rng, 1)
    with pytest.raises(ValueError):
        prop.predict_state(x, dt)
    with pytest.raises(ValueError):
        prop.compute_F(x, dt)


def test_propagate_backwards_rejected(rng):
    x = random_state(rng, 1)
    with pytest.raises(ValueError, match="backwards"):
        prop.propagate(x, x.t - 0.1, prop.ProcessNoise(), True)


def test_propagate_substeps_land_on_target(rng):
    x = random_state(rng, 2)
    y = prop.propagate(x, x.t + 2.5, prop.ProcessNoise(), True)
    assert y.t == x.t + 2.5
    assert np.all(np.linalg.eigvalsh(y.P) > 0)


def test_build_Q_trace():
    noises = [NoiseParams(1e-3, 1e-4, 2e-4, 3e-5), NoiseParams(1e-3, 1e-4, 5e-4, 7e-5)]
    pn = prop.ProcessNoise.from_imus(noises, accel_drive=2.0, rate_drive=0.1, ang_accel_drive=0.0)
    dt = 0.01
    Q = prop.build_Q(pn, 2, dt, calibrating=True)
    bias = sum(3 * (n.accel_bias_rw**2 + n.gyro_bias_rw**2) for n in noises)
    assert np.trace(Q) == pytest.approx(dt * (3 * 2.0 + 3 * 0.1 + bias), rel=1e-12)
    Qoff = prop.build_Q(pn, 2, dt, calibrating=False)
    assert np.trace(Qoff) == pytest.approx(dt * 6.3, rel=1e-12)


def test_process_noise_rejects_unknown_mapping():
    with pytest.raises(ValueError, match="mapping"):
        prop.ProcessNoise(mapping="midpoint")


def _van_loan(Fc, Qc, dt):
    """Exact discrete transition and noise of dx/dt = Fc x + w, E[w w^T] = Qc delta."""
    n = len(Fc)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -Fc
    M[:n, n:] = Qc
    M[n:, n:] = Fc.T
    E = expm(M * dt)
    Phi = E[n:, n:].T
    return Phi, Phi @ E[:n, n:]


@pytest.mark.parametrize("dt", [0.005, 0.01])
def test_trapezoid_matches_continuous_velocity_acceleration_term(dt):
    # 1-D chain p, v, a driven by white jerk
    q = 0.7
    Fc = np.zeros((3, 3))
    Fc[0, 1] = Fc[1, 2] = 1.0
    Qc = np.diag([0, 0, q])
    Phi, Qd = _van_loan(Fc, Qc, dt)
    Qk = np.diag([0, 0, q * dt])
    trap = prop.predict_covariance(np.zeros((3, 3)), Phi, Qk, "trapezoid")
    trans = prop.predict_covariance(np.zeros((3, 3)), Phi, Qk, "transition")
    assert trap[1, 2] == pytest.approx(Qd[1, 2], rel=1e-12)
    assert trans[1, 2] == pytest.approx(2 * Qd[1, 2], rel=1e-12)
    assert trap[2, 2] == pytest.approx(Qd[2, 2], rel=1e-12)


def test_predict_covariance_shapes():
    with pytest.raises(ValueError, match="shape"):
        prop.predict_covariance(np.eye(3), np.eye(4), np.eye(3))


def test_gravity_block_is_zero(rng):
    x = random_state(rng, 1)
    F = prop.compute_F(x, 0.1)
    assert not F[V, TH].any()
    np.testing.assert_allclose(F[P, A], 0.005 * np.eye(3))
    assert not F[W, TH].any() and not F[AL, W].any()


def _still(**kw):
    body = BodyState(**{k: np.asarray(v, float) for k, v in kw.items()})
    return make_state([ImuCalibration(pinned=True), ImuCalibration(np.array([0.1, 0, 0]))], body=body)


def test_hover_keeps_velocity():
    y = prop.predict_state(_still(a=[0, 0, 9.80665]), 1.0)
    np.testing.assert_array_equal(y.body.v, np.zeros(3))


def test_constant_velocity_moves_position():
    y = prop.predict_state(_still(v=[1, 0, 0]), 0.5)
    np.testing.assert_allclose(y.body.p, [0.5, 0, 0], atol=1e-15)


def test_yaw_rate_closed_form():
    x = _still(w=[0, 0, 0.1])
    for _ in range(100):
        x = prop.predict_state(x, 0.1)
    yaw = 2 * np.arctan2(x.body.q[3], x.body.q[0])
    assert abs(yaw - 1.0) < 1e-6


def test_calibration_untouched_by_prediction(rng):
    x = random_state(rng, 3)
    y = prop.predict_state(x, 0.3)
    for a, b in zip(x.imus, y.imus):
        for f in ("p", "q", "b_a", "b_w"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_zero_step_is_identity(rng):
    x = random_state(rng, 2)
    np.testing.assert_array_equal(prop.compute_F(x, 0.0), np.eye(x.dim))


def test_substeps_agree_with_single_step(rng):
    x = random_state(rng, 1)
    x.body.w = x.body.w / np.linalg.norm(x.body.w)
    one = prop.predict_state(x, 1.0)
    many = x
    for _ in range(20):
        many = prop.predict_state(many, 0.05)
    assert np.linalg.norm(one.body.p - many.body.p) < 1e-4


def test_Q_block_layout():
    pn = prop.ProcessNoise.from_imus([NoiseParams(1e-3, 1e-4)] * 2)
    off = prop.build_Q(pn, 2, 0.01, calibrating=False)
    assert not off[18:].any()
    on = prop.build_Q(pn, 2, 0.01, calibrating=True)
    for i in range(2):
        o = 18 + 12 * i
        assert not on[o : o + 6].any()
        assert np.all(np.diag(on)[o + 6 : o + 12] > 0)
    assert not on[P].any() and not on[V].any() and not on[TH].any()


@pytest.mark.parametrize("mapping", prop.NOISE_MAPPINGS)
def test_identity_transition(mapping, rng):
    A = rng.normal(size=(5, 5))
    Pm = A @ A.T
    Q = np.diag(rng.uniform(0, 1, 5))
    np.testing.assert_allclose(prop.predict_covariance(Pm, np.eye(5), np.zeros((5, 5)), mapping), Pm)
    np.testing.assert_allclose(prop.predict_covariance(Pm, np.eye(5), Q, mapping), Pm + Q, atol=1e-14)


@pytest.mark.parametrize("mapping", prop.NOISE_MAPPINGS)
def test_prediction_keeps_psd(mapping):
    rng = np.random.default_rng(99)
    worst = np.inf
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        A = rng.normal(size=(n, n - 1))  # rank deficient on purpose
        Q = np.diag(rng.uniform(0, 1, n) * (rng.uniform(size=n) > 0.3))
        Pn = prop.predict_covariance(A @ A.T, rng.normal(size=(n, n)), Q, mapping)
        worst = min(worst, np.linalg.eigvalsh(Pn).min())
    assert worst >= -1e-9
