import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usage_oracle.aug import Aug, EdgeModel, edge_prob
from usage_oracle.implicit import (
    brute_force_if,
    build_transition_matrix,
    implicit_for_testing,
    implicit_for_training,
    refine,
)

from conftest import events, random_aug, random_history

A, B, T = 0, 1, 2

THREE_APP_M = np.array([[0.49, 0.6, 0.01], [0.0, 0.0, 0.13], [0.0, 0.0, 0.0]])


def flat(p: float) -> EdgeModel:
    """Edge whose probability is ``p`` at every interval below one minute."""
    return EdgeModel(alpha=p, beta=math.log(2), weight=1.0)


def test_single_edge_history():
    aug = Aug(3, {A: {T: flat(0.3)}})
    expected = [0.3, 0.0, 0.0]
    assert implicit_for_training(events((A, 0.0)), T, 0.5, aug).tolist() == expected
    assert brute_force_if(events((A, 0.0)), T, 0.5, aug).tolist() == expected


def test_empty_history_is_zero():
    aug = Aug(3, {A: {T: flat(0.3)}})
    assert not implicit_for_training([], T, 1.0, aug).any()
    assert not brute_force_if([], T, 1.0, aug).any()
    assert not build_transition_matrix([], 1.0, aug).any()


def test_two_hop_hand_expansion():
    aug = Aug(3, {A: {T: EdgeModel(0.5, 0.4, 0.6), B: EdgeModel(0.7, 0.2, 0.4)}, B: {T: EdgeModel(0.9, 0.3, 1.0)}})
    history = events((A, 0.0), (B, 1.0))
    p = lambda s, d, x: edge_prob(aug, s, d, x)  # noqa: E731
    expected = np.array([p(A, T, 2.0) + p(A, B, 1.0) * p(B, T, 1.0), p(B, T, 1.0), 0.0])
    np.testing.assert_allclose(implicit_for_training(history, T, 2.0, aug, min_tp=0.0), expected, atol=1e-15)
    np.testing.assert_allclose(brute_force_if(history, T, 2.0, aug, min_tp=0.0), expected, atol=1e-15)


def test_calibrated_two_hop_trace():
    # A1 -(1)-> A2 -(0.5)-> A1 -(0.5)-> A3 with only A1->A2 and A2->A3
    # observed: the A1 entry is the two-hop product, the A2 entry the hop.
    aug = Aug(3, {0: {1: EdgeModel(1 / 13, 0.0001, 1.0)}, 1: {2: EdgeModel(0.13, 0.0001, 1.0)}})
    history = events((0, 0.0), (1, 1.0), (0, 1.5))
    feature = implicit_for_training(history, 2, 2.0, aug)
    np.testing.assert_allclose(feature, [0.01, 0.13, 0.0], atol=1e-4)


def test_repeated_app_occurrences_add_up():
    aug = Aug(2, {A: {T - 1: flat(0.2)}})
    history = events((A, 0.0), (A, 0.2))
    # No A->A edge, so each occurrence contributes only its direct edge.
    assert implicit_for_training(history, 1, 0.5, aug)[A] == pytest.approx(0.4)


def test_min_tp_drops_weak_paths():
    aug = Aug(3, {A: {B: flat(0.1)}, B: {T: flat(0.1)}})
    history = events((A, 0.0), (B, 0.2))
    assert implicit_for_training(history, T, 0.4, aug, min_tp=0.001)[A] == pytest.approx(0.01)
    assert implicit_for_training(history, T, 0.4, aug, min_tp=0.05)[A] == 0.0
    assert implicit_for_training(history, T, 0.4, aug, min_tp=0.05)[B] == pytest.approx(0.1)


def test_lookback_window():
    aug = Aug(3, {A: {T: flat(0.5)}})
    history = events((A, 0.0), (B, 0.1), (B, 0.2), (B, 0.3))
    assert implicit_for_training(history, T, 0.5, aug, max_lookback=4)[A] == pytest.approx(0.5)
    assert implicit_for_training(history, T, 0.5, aug, max_lookback=3)[A] == 0.0


def test_target_before_history_is_rejected():
    aug = Aug(2, {})
    with pytest.raises(ValueError):
        implicit_for_training(events((A, 5.0)), B, 4.0, aug)


def _case(seed):
    rng = np.random.default_rng(seed)
    n_apps = int(rng.integers(1, 7))
    aug = random_aug(rng, n_apps)
    history = random_history(rng, n_apps, int(rng.integers(0, 9)))
    at = (history[-1].timestamp if history else 0.0) + float(rng.exponential(1.0))
    return aug, history, int(rng.integers(n_apps)), at


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.001, 0.1]), st.integers(1, 8))
def test_dp_matches_brute_force(seed, min_tp, lookback):
    aug, history, target, at = _case(seed)
    dp = implicit_for_training(history, target, at, aug, min_tp, lookback)
    oracle = brute_force_if(history, target, at, aug, min_tp, lookback)
    np.testing.assert_allclose(dp, oracle, rtol=0, atol=1e-9)
    assert np.all(dp >= 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_raising_min_tp_never_increases_entries(seed, t1, t2):
    aug, history, target, at = _case(seed)
    lo, hi = sorted((t1, t2))
    assert np.all(implicit_for_training(history, target, at, aug, hi) <= implicit_for_training(history, target, at, aug, lo) + 1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matrix_columns_are_training_features(seed):
    aug, history, _, at = _case(seed)
    matrix = build_transition_matrix(history, at, aug)
    for j in range(aug.n_apps):
        np.testing.assert_array_equal(matrix[:, j], implicit_for_training(history, j, at, aug))


def test_three_app_refinement():
    steps = refine(THREE_APP_M, refine_iters=2)
    np.testing.assert_allclose(steps[0].implicit, [0.37, 0.04, 0.0], atol=0.005)
    np.testing.assert_allclose(steps[0].theta_raw, [0.18, 0.22, 0.01], atol=0.005)
    np.testing.assert_allclose(steps[0].theta, [0.44, 0.54, 0.02], atol=0.01)
    np.testing.assert_allclose(steps[1].implicit, [0.5398, 0.0026, 0.0], atol=0.01)
    # Fresh dot products each round, not accumulation onto the old theta.
    np.testing.assert_allclose(steps[1].theta_raw, steps[1].implicit @ THREE_APP_M)


def test_refine_stops_once_the_argmax_settles():
    steps = refine(THREE_APP_M, refine_iters=10)
    assert len(steps) == 2
    assert len(refine(THREE_APP_M, refine_iters=1)) == 1


def test_zero_matrix_keeps_uniform_theta():
    steps = refine(np.zeros((4, 4)), refine_iters=3)
    np.testing.assert_allclose(steps[-1].theta, np.full(4, 0.25))
    assert not steps[-1].implicit.any()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_theta_stays_a_distribution(seed, iters):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    matrix = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    for step in refine(matrix, iters):
        assert abs(step.theta.sum() - 1.0) <= 1e-9
        assert step.theta.min() >= 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_single_nonzero_column_converges_to_its_indicator(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    j = int(rng.integers(n))
    matrix = np.zeros((n, n))
    matrix[:, j] = rng.random(n) * (rng.random(n) < 0.7)
    matrix[int(rng.integers(n)), j] += 0.1
    theta = refine(matrix, 2)[-1].theta
    np.testing.assert_allclose(theta, np.eye(n)[j], atol=1e-12)


def test_implicit_for_testing_uses_the_refined_mixture():
    aug = Aug(3, {A: {B: flat(0.6), T: flat(0.2)}, B: {T: flat(0.5)}})
    history = events((A, 0.0))
    feature, theta = implicit_for_testing(history, 0.5, aug)
    matrix = build_transition_matrix(history, 0.5, aug)
    last = refine(matrix, 3)[-1]
    np.testing.assert_array_equal(feature, last.implicit)
    np.testing.assert_array_equal(theta, last.theta)
    assert int(np.argmax(theta)) == B
