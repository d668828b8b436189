"""Planning sensitivities of the learned cost to agent predictions.

The cost is evaluated along the recorded ego trajectory; no planner is
run. A candidate prediction ``p`` for one agent is aligned with the rollout
steps (``p[k]`` is the predicted position at time ``k + 1``, scored against
ego state ``s[k + 1]``), the first-step prediction gradient of every step's
instantaneous cost is stacked, and the stack is reduced to one nonnegative
number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .cost_model import CostWeights, FeatureConfig, Rollout
from .errors import InvalidInputError, MissingPredictionError

AGGREGATIONS = ("l2", "max")


@dataclass(frozen=True)
class SensitivityConfig:
    features: FeatureConfig = FeatureConfig()
    # "l2": Euclidean norm over all (step, coordinate) entries; "max": largest per-step norm
    aggregation: str = "l2"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise InvalidInputError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass(frozen=True)
class SensitivityMap(Mapping[str, float]):
    values_by_agent: dict[str, float] = field(default_factory=dict)
    aggregation: str = "l2"
    horizon: int = 0

    def __getitem__(self, key: str) -> float:
        return self.values_by_agent[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values_by_agent)

    def __len__(self) -> int:
        return len(self.values_by_agent)


def _w_pred(theta) -> float:
    return float(theta.w_rbf_pred if isinstance(theta, CostWeights) else np.asarray(theta, dtype=float)[3])


def prediction_gradients(theta, rollout: Rollout, trajectory, cfg: SensitivityConfig = SensitivityConfig()) -> np.ndarray:
    """Stacked gradient (H, 2) of the step costs with respect to a candidate's positions."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 2 or traj.shape[1] != 2 or len(traj) == 0:
        raise MissingPredictionError(f"prediction must be a non-empty (H, 2) array, got shape {traj.shape}")
    if not np.all(np.isfinite(traj)):
        raise InvalidInputError("prediction contains non-finite values")
    horizon = len(traj)
    if horizon > rollout.n_steps:
        raise InvalidInputError(f"prediction horizon {horizon} exceeds rollout length {rollout.n_steps}")
    bw2 = cfg.features.rbf_bandwidth ** 2
    diff = rollout.ego_states[1:horizon + 1, :2] - traj
    kern = np.exp(-0.5 * np.sum(diff * diff, axis=1) / bw2)
    return _w_pred(theta) * kern[:, None] * diff / bw2


def _aggregate(grads: np.ndarray, mode: str) -> float:
    if mode == "l2":
        return float(np.sqrt(np.sum(grads * grads)))
    return float(np.max(np.linalg.norm(grads, axis=1)))


def sensitivity_of_trajectory(theta, rollout: Rollout, trajectory,
                              cfg: SensitivityConfig = SensitivityConfig()) -> float:
    return _aggregate(prediction_gradients(theta, rollout, trajectory, cfg), cfg.aggregation)


def planning_sensitivity(theta, rollout: Rollout, predictions: Mapping[str, np.ndarray],
                         cfg: SensitivityConfig = SensitivityConfig()) -> SensitivityMap:
    """Sensitivity of every rollout agent to its predicted trajectory."""
    missing = set(rollout.agent_ids) - set(predictions)
    extra = set(predictions) - set(rollout.agent_ids)
    if missing or extra:
        raise MissingPredictionError(
            f"predictions do not match rollout agents (missing {sorted(missing)}, unknown {sorted(extra)})"
        )
    values = {}
    horizon = 0
    for aid in rollout.agent_ids:
        traj = np.asarray(predictions[aid], dtype=float)
        values[aid] = sensitivity_of_trajectory(theta, rollout, traj, cfg)
        horizon = max(horizon, len(traj))
    return SensitivityMap(values, cfg.aggregation, horizon)
