import numpy as np
import pytest

from mimu import observability as O


def test_matrix_stacks_powers(rng):
    F = rng.normal(size=(4, 4))
    H = rng.normal(size=(2, 4))
    M = O.build_observability_matrix(F, H, n=2)
    np.testing.assert_allclose(M, np.vstack((H, H @ F, H @ F @ F)))
    assert O.build_observability_matrix(F, H).shape == (10, 4)


@pytest.mark.parametrize("F, H, bad", [(np.ones((2, 3)), np.ones((1, 3)), "square"), (np.eye(3), np.ones((1, 2)), "columns")])
def test_shape_errors(F, H, bad):
    with pytest.raises(ValueError, match=bad):
        O.build_observability_matrix(F, H)


def test_double_integrator():
    # position measured: fully observable; velocity measured: position unobservable
    F = np.array([[1.0, 0.1], [0.0, 1.0]])
    assert O.rank_report(O.build_observability_matrix(F, [[1.0, 0.0]])).deficiency == 0
    assert O.rank_report(O.build_observability_matrix(F, [[0.0, 1.0]])).deficiency == 1


def test_pinned_columns_adjust_report():
    M = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    rep = O.rank_report(M, pinned_columns=[2])
    assert (rep.rank, rep.deficiency, rep.adjusted_rank, rep.adjusted_deficiency) == (2, 1, 2, 0)
    assert any("deficiency (free)" in line for line in rep.lines())


def test_zero_matrix():
    rep = O.rank_report(np.zeros((3, 3)))
    assert rep.rank == 0 and rep.deficiency == 3


def test_report_validates():
    with pytest.raises(ValueError):
        O.ObservabilityReport(5, 3, 1, np.zeros(3), 1e-8)


@pytest.mark.parametrize("n", [1, 2])
def test_trajectory_rank_is_seed_independent(n):
    a = O.analyze(n, seed=1)
    b = O.analyze(n, seed=2)
    assert a.adjusted_deficiency == b.adjusted_deficiency == 6


def test_frozen_point_loses_more_directions():
    moving = O.analyze(2)
    frozen = O.analyze(2, frozen=True)
    assert frozen.adjusted_deficiency > moving.adjusted_deficiency


def test_identity_transition_repeats_H(rng):
    H = rng.normal(size=(2, 5))
    M = O.build_observability_matrix(np.eye(5), H, n=3)
    assert M.shape == (8, 5)
    np.testing.assert_array_equal(M, np.tile(H, (4, 1)))


def test_full_measurement_full_rank(rng):
    F = rng.normal(size=(6, 6))
    assert O.rank_report(O.build_observability_matrix(F, np.eye(6), n=1)).deficiency == 0


def test_rows_never_increase_deficiency(rng):
    F = np.eye(6) + 0.1 * np.diag(np.ones(5), 1)
    H = rng.normal(size=(1, 6))
    base = O.rank_report(O.build_observability_matrix(F, H, n=1)).deficiency
    more = O.rank_report(O.build_observability_matrix(F, np.vstack((H, rng.normal(size=(1, 6)))), n=1)).deficiency
    assert more <= base
