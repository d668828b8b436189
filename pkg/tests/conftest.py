from __future__ import annotations

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pimetric.cost_model import Rollout
from pimetric.dynamics import rollout_states_array

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_rollout(rng: np.random.Generator, n_steps: int = 8, n_agents: int = 2, pred_horizon: int = 3,
                 dt: float = 0.1) -> Rollout:
    """Random rollout with agents scattered around the ego path (so every feature is active)."""
    initial = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-np.pi, np.pi)])
    controls = np.column_stack([rng.uniform(0.0, 2.0, n_steps), rng.uniform(-1.0, 1.0, n_steps)])
    states = rollout_states_array(initial, controls, dt)
    agents = states[:, None, :2] + rng.normal(0.0, 1.2, (n_steps + 1, n_agents, 2))
    preds = agents[1:, :, None, :] + rng.normal(0.0, 0.4, (n_steps, n_agents, pred_horizon, 2))
    ids = tuple(f"a{i}" for i in range(n_agents))
    return Rollout(dt, states, controls, ids, agents, preds)


def rel_err(actual, expected, floor: float = 1.0) -> float:
    """Max-abs error scaled by max(floor, max |expected|)."""
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    return float(np.max(np.abs(actual - expected)) / max(floor, float(np.max(np.abs(expected)))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    verdicts = sys.modules.get("test_acceptance")
    if verdicts is None or not verdicts.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts.VERDICTS):
        terminalreporter.write_line(verdicts.VERDICTS[n])
