from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_rollout, rel_err
from pimetric.cost_model import (
    CostWeights,
    FeatureConfig,
    Rollout,
    SceneSnapshot,
    cost,
    features,
    grad_cost_controls,
    grad_cost_predictions,
    snapshot_sequence,
    trajectory_cost,
    trajectory_cost_control_gradient,
)
from pimetric.dynamics import Control, EgoState, jacobians_dynamic_array
from pimetric.errors import InvalidInputError, MalformedRolloutError, MissingPredictionError

weights = st.tuples(*[st.floats(0, 5) for _ in range(4)]).map(lambda t: CostWeights(*t))


def snap_at(ego_xy, agents=(), preds=None, heading=0.0):
    agents = tuple((f"a{i}", tuple(p)) for i, p in enumerate(agents))
    if preds is None:
        preds = {aid: np.array([p]) for aid, p in agents}
    return SceneSnapshot(EgoState(ego_xy[0], ego_xy[1], heading), agents, preds)


def random_snap(rng, n_agents=3, horizon=4):
    ego = rng.uniform(-3, 3, 2)
    agents = ego + rng.normal(0, 1.5, (n_agents, 2))
    preds = {f"a{i}": agents[i] + rng.normal(0, 0.5, (horizon, 2)) for i in range(n_agents)}
    return snap_at(ego, agents, preds, heading=rng.uniform(-3, 3))


# -- features / cost ---------------------------------------------------------


def test_goal_feature_is_squared_distance():
    fv = features(snap_at((3.0, 4.0)), Control(0, 0))
    np.testing.assert_array_equal(fv.as_array(), [25.0, 0.0, 0.0, 0.0])


def test_agent_on_ego_contributes_one():
    fv = features(snap_at((1.0, 1.0), [(1.0, 1.0)]), Control(0, 0))
    assert fv.rbf_current_term == 1.0
    assert fv.rbf_pred_term == 1.0


def test_rbf_tail_is_negligible():
    fv = features(snap_at((0.0, 0.0), [(10.0, 0.0)]), Control(0, 0))
    assert fv.rbf_current_term < 1e-21


def test_zero_weights_give_zero_cost(rng):
    snap = random_snap(rng)
    assert cost(CostWeights(0, 0, 0, 0), snap, Control(1.3, -0.2)) == 0.0


def test_goal_weight_selects_goal_term():
    assert cost(CostWeights(1, 0, 0, 0), snap_at((3.0, 4.0)), Control(0.5, 0.5)) == 25.0


def test_cost_is_dot_product_with_features(rng):
    for _ in range(20):
        snap = random_snap(rng)
        u = Control(*rng.normal(size=2))
        th = CostWeights(*rng.uniform(0, 3, 4))
        assert cost(th, snap, u) == pytest.approx(th.as_array() @ features(snap, u).as_array(), rel=1e-14)


@given(a=st.floats(0, 10), b=st.floats(0, 10), t1=weights, t2=weights, seed=st.integers(0, 2 ** 32 - 1))
def test_cost_is_linear_in_weights(a, b, t1, t2, seed):
    rng = np.random.default_rng(seed)
    snap = random_snap(rng)
    u = Control(*rng.normal(size=2))
    combo = CostWeights.from_array(a * t1.as_array() + b * t2.as_array())
    expected = a * cost(t1, snap, u) + b * cost(t2, snap, u)
    assert cost(combo, snap, u) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_features_invariant_to_agent_order(rng):
    snap = random_snap(rng, n_agents=4)
    rev = SceneSnapshot(snap.ego, tuple(reversed(snap.agents)), snap.predictions)
    np.testing.assert_allclose(features(rev, Control(1, 0)).as_array(),
                               features(snap, Control(1, 0)).as_array(), rtol=1e-15)


def test_custom_goal_and_bandwidth():
    cfg = FeatureConfig(goal=(1.0, 1.0), rbf_bandwidth=2.0)
    fv = features(snap_at((1.0, 3.0), [(1.0, 1.0)]), Control(0, 0), cfg)
    assert fv.goal_term == 4.0
    assert fv.rbf_current_term == pytest.approx(np.exp(-0.5))


# -- gradients ---------------------------------------------------------------


def test_control_gradient_examples():
    snap = snap_at((0.0, 0.0))
    np.testing.assert_array_equal(grad_cost_controls(CostWeights(), snap, Control(0, 0)), [0.0, 0.0])
    np.testing.assert_array_equal(grad_cost_controls(CostWeights(), snap, Control(2, -1)), [4.0, -2.0])


def test_control_gradient_matches_fd(rng):
    h = 1e-6
    for _ in range(50):
        snap = random_snap(rng)
        th = CostWeights(*rng.uniform(0, 3, 4))
        u = rng.normal(size=2)
        fd = [(cost(th, snap, Control(*(u + e))) - cost(th, snap, Control(*(u - e)))) / (2 * h)
              for e in np.eye(2) * h]
        assert rel_err(grad_cost_controls(th, snap, Control(*u)), fd) <= 1e-7


def test_prediction_gradient_zero_at_peak():
    g = grad_cost_predictions(CostWeights(), snap_at((1.0, 2.0), [(1.0, 2.0)]), Control(0, 0))
    np.testing.assert_array_equal(g["a0"], [[0.0, 0.0]])


def test_prediction_gradient_tail():
    g = grad_cost_predictions(CostWeights(), snap_at((0.0, 0.0), [(10.0, 0.0)]), Control(0, 0))
    assert np.linalg.norm(g["a0"]) < 1e-20


def test_prediction_gradient_matches_fd(rng):
    h = 1e-6
    for _ in range(50):
        snap = random_snap(rng, horizon=3)
        th = CostWeights(*rng.uniform(0, 3, 4))
        u = Control(*rng.normal(size=2))
        grads = grad_cost_predictions(th, snap, u)
        for aid, pred in snap.predictions.items():
            fd = np.zeros_like(pred)
            for k in range(pred.shape[0]):
                for j in range(2):
                    plus, minus = pred.copy(), pred.copy()
                    plus[k, j] += h
                    minus[k, j] -= h
                    cp = cost(th, SceneSnapshot(snap.ego, snap.agents, {**snap.predictions, aid: plus}), u)
                    cm = cost(th, SceneSnapshot(snap.ego, snap.agents, {**snap.predictions, aid: minus}), u)
                    fd[k, j] = (cp - cm) / (2 * h)
            assert rel_err(grads[aid], fd) <= 1e-6
            np.testing.assert_array_equal(grads[aid][1:], 0.0)


@given(d1=st.floats(1.01, 6.0), gap=st.floats(0.01, 3.0), angle=st.floats(0, 2 * np.pi))
def test_prediction_gradient_decreases_beyond_one_bandwidth(d1, gap, angle):
    direction = np.array([np.cos(angle), np.sin(angle)])
    norms = []
    for d in (d1, d1 + gap):
        g = grad_cost_predictions(CostWeights(), snap_at((0.0, 0.0), [d * direction]), Control(0, 0))
        norms.append(np.linalg.norm(g["a0"]))
    assert norms[0] > norms[1]


def test_missing_prediction_raises():
    snap = SceneSnapshot(EgoState(0, 0, 0), (("a0", (1.0, 1.0)),), {})
    with pytest.raises(MissingPredictionError):
        features(snap, Control(0, 0))


# -- rollouts ----------------------------------------------------------------


def test_single_step_trajectory_cost_equals_step_cost(rng):
    r = make_rollout(rng, n_steps=1)
    th = CostWeights(*rng.uniform(0, 3, 4))
    assert trajectory_cost(th, r) == pytest.approx(cost(th, r.snapshot(0), Control(*r.controls[0])), rel=1e-14)


def test_control_only_cost_zero_for_zero_controls(rng):
    r = make_rollout(rng).with_controls(np.zeros((8, 2)))
    assert trajectory_cost(CostWeights(0, 1, 0, 0), r) == 0.0


def test_trajectory_cost_equals_brute_force_sum(rng):
    for _ in range(10):
        r = make_rollout(rng, n_steps=12, n_agents=3)
        th = CostWeights(*rng.uniform(0, 3, 4))
        total = sum(cost(th, snap, Control(*u)) for snap, u in zip(snapshot_sequence(r), r.controls))
        assert trajectory_cost(th, r) == pytest.approx(total, rel=1e-12)


def test_control_only_gradient_is_twice_controls(rng):
    r = make_rollout(rng)
    np.testing.assert_allclose(trajectory_cost_control_gradient(CostWeights(0, 1, 0, 0), r),
                               2 * r.controls.reshape(-1), rtol=1e-15)


def test_one_step_goal_gradient_by_hand(rng):
    r = make_rollout(rng, n_steps=1)
    _, b = jacobians_dynamic_array(r.ego_states[0], r.controls[0], r.dt)
    expected = 2 * r.ego_states[1, :2] @ b[:2]
    np.testing.assert_allclose(trajectory_cost_control_gradient(CostWeights(1, 0, 0, 0), r), expected, rtol=1e-12)


def test_trajectory_gradient_matches_fd(rng):
    h = 1e-6
    for _ in range(20):
        r = make_rollout(rng, n_steps=int(rng.integers(1, 15)), n_agents=2)
        th = CostWeights(*rng.uniform(0, 3, 4))
        base = r.controls.reshape(-1)
        fd = np.empty_like(base)
        for i in range(base.size):
            e = np.zeros_like(base)
            e[i] = h
            fd[i] = (trajectory_cost(th, r.with_controls(base + e)) - trajectory_cost(th, r.with_controls(base - e))) / (2 * h)
        assert rel_err(trajectory_cost_control_gradient(th, r), fd) <= 1e-5


def test_trajectory_cost_reintegrates_states(rng):
    r = make_rollout(rng)
    shifted = r.ego_states.copy()
    shifted[1:, :2] += 5.0  # recorded states disagree with the controls after t = 0
    moved = Rollout(r.dt, shifted, r.controls, r.agent_ids, r.agent_positions, r.predictions)
    assert trajectory_cost(CostWeights(), moved) == trajectory_cost(CostWeights(), r)


def test_rollout_length_mismatch():
    with pytest.raises(MalformedRolloutError):
        Rollout(0.1, np.zeros((3, 3)), np.zeros((3, 2)))


def test_rollout_default_predictions_are_next_positions(rng):
    r = make_rollout(rng)
    plain = Rollout(r.dt, r.ego_states, r.controls, r.agent_ids, r.agent_positions)
    np.testing.assert_array_equal(plain.first_predictions(), r.agent_positions[1:])


@pytest.mark.parametrize("bad", [(-1, 0, 0, 0), (0, float("nan"), 0, 0), (0, 0, float("inf"), 0)])
def test_weights_must_be_finite_nonnegative(bad):
    with pytest.raises(InvalidInputError):
        CostWeights(*bad)
