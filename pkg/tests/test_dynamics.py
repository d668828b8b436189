from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rel_err
from pimetric.dynamics import (
    Control,
    EgoState,
    StepConfig,
    jacobians_dynamic,
    jacobians_dynamic_array,
    jacobians_kinematic,
    jacobians_kinematic_array,
    rollout_states_array,
    step_dynamic,
    step_dynamic_array,
    step_kinematic,
    step_kinematic_array,
)
from pimetric.errors import InvalidInputError

finite = st.floats(-10, 10, allow_nan=False)


def fd_jacobians(step, s, u, h=1e-5):
    a = np.empty((3, 3))
    b = np.empty((3, 2))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        a[:, j] = (step(s + e, u) - step(s - e, u)) / (2 * h)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        b[:, j] = (step(s, u + e) - step(s, u - e)) / (2 * h)
    return a, b


# -- kinematic model -------------------------------------------------------


def test_kinematic_zero_control_fixed_point():
    out = step_kinematic(EgoState(0, 0, 0), Control(0, 0), StepConfig(dt=0.1))
    assert out == EgoState(0.0, 0.0, 0.0)


def test_kinematic_straight_line():
    out = step_kinematic(EgoState(0, 0, 0), Control(1, 0), StepConfig(dt=0.1))
    np.testing.assert_allclose(out.as_array(), [0.1, 0.0, 0.0], atol=1e-15)


def test_kinematic_matches_high_precision_closed_form():
    mpmath.mp.dps = 50
    x, y, phi = mpmath.mpf(1), mpmath.mpf(2), mpmath.pi / 4
    v, w, dt = mpmath.mpf(2), mpmath.mpf("0.3"), mpmath.mpf("0.1")
    expected = [x + v * mpmath.cos(phi + w) * dt, y + v * mpmath.sin(phi + w) * dt, phi + w]
    out = step_kinematic(EgoState(1.0, 2.0, math.pi / 4), Control(2.0, 0.3), StepConfig(dt=0.1))
    np.testing.assert_allclose(out.as_array(), [float(e) for e in expected], rtol=1e-15)


def test_kinematic_heading_ignores_dt():
    out = step_kinematic(EgoState(0, 0, 0.2), Control(0, 0.5), StepConfig(dt=0.01))
    assert out.heading == pytest.approx(0.7, abs=1e-15)


def test_kinematic_jacobians_at_zero_speed():
    phi = 0.7
    jac = jacobians_kinematic(EgoState(1, 1, phi), Control(0, 0), StepConfig(dt=0.1))
    np.testing.assert_array_equal(jac.a_matrix, np.eye(3))
    np.testing.assert_allclose(jac.b_matrix[:, 0], [math.cos(phi) * 0.1, math.sin(phi) * 0.1, 0.0])


def test_kinematic_jacobian_heading_column_unit_step():
    jac = jacobians_kinematic(EgoState(0, 0, 0), Control(1, 0), StepConfig(dt=1.0))
    assert jac.a_matrix[0, 2] == 0.0
    assert jac.a_matrix[1, 2] == 1.0


def test_kinematic_jacobians_match_fd(rng):
    for _ in range(200):
        s = rng.uniform([-5, -5, -np.pi], [5, 5, np.pi])
        u = rng.uniform([-2, -1.5], [2, 1.5])
        dt = rng.uniform(0.01, 1.0)
        a, b = jacobians_kinematic_array(s, u, dt)
        fa, fb = fd_jacobians(lambda ss, uu: step_kinematic_array(ss, uu, dt), s, u)
        assert rel_err(a, fa) <= 1e-6
        assert rel_err(b, fb) <= 1e-6


# -- dynamic model -----------------------------------------------------------


def test_dynamic_straight_line():
    out = step_dynamic(EgoState(0, 0, 0), Control(1, 0), StepConfig(dt=0.5))
    np.testing.assert_allclose(out.as_array(), [0.5, 0.0, 0.0], atol=1e-15)


def test_dynamic_unit_turn():
    out = step_dynamic(EgoState(0, 0, 0), Control(1, 1), StepConfig(dt=0.1))
    np.testing.assert_allclose(out.as_array(), [math.sin(0.1), 1 - math.cos(0.1), 0.1], rtol=1e-13)
    np.testing.assert_allclose(out.as_array(), [0.0998334, 0.0049958, 0.1], atol=1e-7)


def test_dynamic_turning_branch_matches_mpmath(rng):
    mpmath.mp.dps = 40
    for _ in range(20):
        s = rng.uniform([-5, -5, -np.pi], [5, 5, np.pi])
        u = np.array([rng.uniform(0, 2), rng.choice([-1, 1]) * rng.uniform(0.05, 1.0)])
        dt = 0.1
        x, y, phi = (mpmath.mpf(float(c)) for c in s)
        v, w = (mpmath.mpf(float(c)) for c in u)
        end = phi + w * dt
        expected = [
            x + v / w * (mpmath.sin(end) - mpmath.sin(phi)),
            y - v / w * (mpmath.cos(end) - mpmath.cos(phi)),
            end,
        ]
        np.testing.assert_allclose(step_dynamic_array(s, u, dt), [float(e) for e in expected], rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("eps", [1e-7, -1e-7, 1e-6, 1e-8])
def test_dynamic_branch_continuity(rng, eps):
    for _ in range(50):
        s = rng.uniform([-5, -5, -np.pi], [5, 5, np.pi])
        v = rng.uniform(0, 3)
        near = step_dynamic_array(s, [v, eps], 0.1)
        zero = step_dynamic_array(s, [v, 0.0], 0.1)
        assert np.max(np.abs(near[:2] - zero[:2])) <= 1e-6


@given(x=finite, y=finite, phi=st.floats(-4, 4), w=st.floats(-2, 2), dt=st.floats(0.01, 1.0))
def test_dynamic_zero_speed_changes_heading_only(x, y, phi, w, dt):
    out = step_dynamic_array([x, y, phi], [0.0, w], dt)
    assert out[0] == x and out[1] == y
    assert out[2] == phi + w * dt


def test_dynamic_turning_jacobians_match_fd(rng):
    for _ in range(200):
        s = rng.uniform([-5, -5, -np.pi], [5, 5, np.pi])
        u = np.array([rng.uniform(-2, 2), rng.choice([-1, 1]) * rng.uniform(0.1, 1.5)])
        dt = rng.uniform(0.01, 1.0)
        a, b = jacobians_dynamic_array(s, u, dt)
        fa, fb = fd_jacobians(lambda ss, uu: step_dynamic_array(ss, uu, dt), s, u)
        assert rel_err(a, fa) <= 1e-6
        assert rel_err(b, fb) <= 1e-6


def test_dynamic_straight_jacobians_match_fd(rng):
    for _ in range(200):
        s = rng.uniform([-5, -5, -np.pi], [5, 5, np.pi])
        u = np.array([rng.uniform(-2, 2), 0.0])
        dt = rng.uniform(0.01, 1.0)
        a, b = jacobians_dynamic_array(s, u, dt)
        fa, fb = fd_jacobians(lambda ss, uu: step_dynamic_array(ss, uu, dt), s, u)
        assert rel_err(a, fa) <= 1e-6
        assert rel_err(b, fb) <= 1e-6


def test_printed_straight_branch_turn_column():
    cfg = StepConfig(dt=0.1)
    printed = jacobians_dynamic(EgoState(1, 2, 0.3), Control(1.5, 0.0), cfg, exact_limit=False)
    np.testing.assert_array_equal(printed.b_matrix[:, 1], [0.0, 0.0, 0.0])
    turning = jacobians_dynamic(EgoState(1, 2, 0.3), Control(1.5, 0.4), cfg)
    assert turning.b_matrix[2, 1] == pytest.approx(0.1)
    limit = jacobians_dynamic(EgoState(1, 2, 0.3), Control(1.5, 0.0), cfg)
    np.testing.assert_allclose(limit.b_matrix[:, 1], [-0.5 * 1.5 * math.sin(0.3) * 0.01,
                                                      0.5 * 1.5 * math.cos(0.3) * 0.01, 0.1])


def test_straight_and_turning_jacobians_agree_at_threshold(rng):
    cfg = StepConfig(dt=0.1)
    for _ in range(20):
        s = EgoState(*rng.uniform([-5, -5, -np.pi], [5, 5, np.pi]))
        v = rng.uniform(0, 2)
        near = jacobians_dynamic(s, Control(v, 2e-6), cfg)
        zero = jacobians_dynamic(s, Control(v, 0.0), cfg)
        np.testing.assert_allclose(near.a_matrix, zero.a_matrix, atol=1e-6)
        np.testing.assert_allclose(near.b_matrix, zero.b_matrix, atol=1e-6)


def test_batched_kernels_match_scalar(rng):
    s = rng.normal(size=(4, 3))
    u = rng.normal(size=(4, 2))
    batch = step_dynamic_array(s, u, 0.1)
    for i in range(4):
        np.testing.assert_array_equal(batch[i], step_dynamic_array(s[i], u[i], 0.1))
    a, b = jacobians_dynamic_array(s, u, 0.1)
    assert a.shape == (4, 3, 3) and b.shape == (4, 3, 2)


def test_rollout_states_shape_and_start(rng):
    controls = rng.normal(size=(6, 2))
    states = rollout_states_array([1.0, 2.0, 0.5], controls, 0.1)
    assert states.shape == (7, 3)
    np.testing.assert_array_equal(states[0], [1.0, 2.0, 0.5])
    np.testing.assert_array_equal(states[3], step_dynamic_array(states[2], controls[2], 0.1))


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_non_finite_inputs_rejected(bad):
    with pytest.raises(InvalidInputError):
        EgoState(bad, 0, 0)
    with pytest.raises(InvalidInputError):
        Control(0, bad)
    with pytest.raises(InvalidInputError):
        step_dynamic([0, bad, 0], [1, 0])


@pytest.mark.parametrize("dt", [0.0, -0.1, float("nan")])
def test_step_config_rejects_bad_dt(dt):
    with pytest.raises(InvalidInputError):
        StepConfig(dt=dt)


@given(
    phi=st.floats(-4, 4),
    v=st.floats(-2, 2),
    log_w=st.floats(-5.9, -1),
    sign=st.sampled_from([-1.0, 1.0]),
    dt=st.floats(0.01, 1.0),
)
def test_turning_jacobians_accurate_for_small_turn_rates(phi, v, log_w, sign, dt):
    s = np.array([0.3, -0.2, phi])
    u = np.array([v, sign * 10.0 ** log_w])
    a, b = jacobians_dynamic_array(s, u, dt)
    fa, fb = fd_jacobians(lambda ss, uu: step_dynamic_array(ss, uu, dt), s, u)
    assert rel_err(a, fa) <= 1e-6
    assert rel_err(b, fb) <= 1e-6
