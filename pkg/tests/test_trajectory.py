import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mimu.state import G_GLOBAL
from mimu.trajectory import TrajectoryBounds, TrajectoryModel, euler_to_quat, gen_trajectory
from oracles import quat, rot
from scipy.spatial.transform import Rotation


def test_euler_matches_scipy_zyx(rng):
    e = rng.uniform(-1, 1, (20, 3))
    want = np.array([quat(Rotation.from_euler("ZYX", [y, p, r])) for r, p, y in e])
    np.testing.assert_allclose(euler_to_quat(e), want, atol=1e-14)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_derivatives_match_finite_differences(seed):
    tr = gen_trajectory(seed)
    t = np.linspace(1.0, 9.0, 17)
    h = 1e-5
    p_plus, v_plus, _ = tr.position(t + h)
    p_minus, v_minus, _ = tr.position(t - h)
    _, v, acc = tr.position(t)
    np.testing.assert_allclose((p_plus - p_minus) / (2 * h), v, atol=1e-8)
    np.testing.assert_allclose((v_plus - v_minus) / (2 * h), acc, atol=1e-8)

    # body rate from the attitude derivative: w = log(q(t)^-1 q(t+h)) / h
    w, alpha = tr.rates(t)
    q_plus, q_minus = tr.attitude(t + h), tr.attitude(t - h)
    w_fd = np.array([(rot(a).inv() * rot(b)).as_rotvec() / (2 * h) for a, b in zip(q_minus, q_plus)])
    np.testing.assert_allclose(w_fd, w, atol=1e-8)
    w_p, _ = tr.rates(t + h)
    w_m, _ = tr.rates(t - h)
    np.testing.assert_allclose((w_p - w_m) / (2 * h), alpha, atol=1e-7)


def test_specific_force_removes_gravity():
    tr = gen_trajectory(2)
    t = np.array([0.3, 4.0])
    np.testing.assert_allclose(tr.specific_force(t), tr.position(t)[2] - G_GLOBAL)


@given(st.integers(0, 2**31 - 1))
def test_bounds_respected(seed):
    b = TrajectoryBounds(pos_amplitude_m=1.5, ang_amplitude_rad=0.2, freq_min_hz=0.1, freq_max_hz=0.3)
    tr = gen_trajectory(seed, b)
    assert np.all(tr.pos_amp.sum(axis=1) <= 1.5 + 1e-12)
    assert np.all(tr.ang_amp.sum(axis=1) <= 0.2 + 1e-12)
    assert np.all((tr.pos_freq >= 0.1) & (tr.pos_freq <= 0.3))


def test_static_trajectory_is_level_and_still():
    s = TrajectoryModel.static().state(3.0)
    np.testing.assert_allclose(s.p, 0)
    np.testing.assert_allclose(s.a, -G_GLOBAL)
    np.testing.assert_allclose(s.q, [1, 0, 0, 0])


@pytest.mark.parametrize("kw", [dict(pos_amplitude_m=-1), dict(freq_min_hz=0), dict(freq_min_hz=1, freq_max_hz=0.5),
                                dict(n_terms=0)])
def test_invalid_bounds(kw):
    with pytest.raises(ValueError):
        TrajectoryBounds(**kw)


def test_same_seed_same_trajectory():
    a, b = gen_trajectory(11), gen_trajectory(11)
    np.testing.assert_array_equal(a.pos_amp, b.pos_amp)
    np.testing.assert_array_equal(a.ang_phase, b.ang_phase)
