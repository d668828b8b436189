"""Linear planning cost with four hand-designed features.

Per step the ego pays

    w_goal * |p - goal|^2
    + w_control * (v^2 + w^2)
    + w_rbf_current * sum_a exp(-|p - a|^2 / (2 bw^2))
    + w_rbf_pred    * sum_a exp(-|p - a_hat|^2 / (2 bw^2))

where ``p`` is the ego position, ``a`` the agents' current positions and
``a_hat`` their one-step predicted positions.

Along a rollout the term for control ``u[t]`` is scored at the state it
produces, ``s[t + 1]``, together with the agent positions and predictions
observed at time ``t``. Trajectory costs are functions of the initial state
and the control sequence only: states are re-integrated with the dynamic
unicycle model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dynamics import (
    DEFAULT_OMEGA_EPS,
    Control,
    EgoState,
    jacobians_dynamic_array,
    rollout_states_array,
)
from .errors import InvalidInputError, MalformedRolloutError, MissingPredictionError

FEATURE_NAMES = ("goal", "control", "rbf_current", "rbf_pred")


@dataclass(frozen=True)
class CostWeights:
    w_goal: float = 1.0
    w_control: float = 1.0
    w_rbf_current: float = 1.0
    w_rbf_pred: float = 1.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise InvalidInputError(f"cost weights must be finite and >= 0, got {tuple(vals)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_goal, self.w_control, self.w_rbf_current, self.w_rbf_pred])

    @classmethod
    def from_array(cls, arr) -> "CostWeights":
        return cls(*(float(a) for a in arr))


@dataclass(frozen=True)
class FeatureConfig:
    goal: tuple[float, float] = (0.0, 0.0)
    rbf_bandwidth: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.rbf_bandwidth) and self.rbf_bandwidth > 0):
            raise InvalidInputError("rbf_bandwidth must be > 0")


@dataclass(frozen=True)
class FeatureVector:
    goal_term: float
    control_term: float
    rbf_current_term: float
    rbf_pred_term: float

    def as_array(self) -> np.ndarray:
        return np.array([self.goal_term, self.control_term, self.rbf_current_term, self.rbf_pred_term])


@dataclass(frozen=True)
class SceneSnapshot:
    """Ego pose, current agent positions and per-agent predicted futures."""

    ego: EgoState
    agents: tuple[tuple[str, tuple[float, float]], ...] = ()
    predictions: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        ids = [a for a, _ in self.agents]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate agent ids in snapshot: {ids}")
        horizons = {len(np.asarray(p).reshape(-1, 2)) for p in self.predictions.values()}
        if len(horizons - {0}) > 1:
            raise InvalidInputError(f"prediction horizons differ within snapshot: {sorted(horizons)}")

    def arrays(self):
        """Return (agent positions (n, 2), first-step predictions (n, 2))."""
        cur = np.array([p for _, p in self.agents], dtype=float).reshape(-1, 2)
        first = np.empty_like(cur)
        for i, (aid, _) in enumerate(self.agents):
            pred = np.asarray(self.predictions.get(aid, ()), dtype=float).reshape(-1, 2)
            if len(pred) == 0:
                raise MissingPredictionError(f"agent {aid!r} has no prediction")
            first[i] = pred[0]
        return cur, first


@dataclass(frozen=True, eq=False)
class Rollout:
    """Time-aligned demonstration record.

    ego_states: (T + 1, 3); controls: (T, 2); agent_positions: (T + 1, n, 2);
    predictions: (T, n, P, 2) -- predictions made at step t of each agent's
    positions at t + 1 .. t + P.
    """

    dt: float
    ego_states: np.ndarray
    controls: np.ndarray
    agent_ids: tuple[str, ...] = ()
    agent_positions: np.ndarray | None = None
    predictions: np.ndarray | None = None

    def __post_init__(self):
        ego = np.asarray(self.ego_states, dtype=float).reshape(-1, 3)
        ctrl = np.asarray(self.controls, dtype=float).reshape(-1, 2)
        n_steps = len(ctrl)
        n_agents = len(self.agent_ids)
        if n_steps < 1:
            raise MalformedRolloutError("rollout needs at least one control")
        if len(ego) != n_steps + 1:
            raise MalformedRolloutError(
                f"expected {n_steps + 1} ego states for {n_steps} controls, got {len(ego)}"
            )
        if len(set(self.agent_ids)) != n_agents:
            raise MalformedRolloutError("agent ids must be unique")
        agents = self.agent_positions
        agents = np.zeros((n_steps + 1, 0, 2)) if agents is None else np.asarray(agents, dtype=float)
        if agents.shape != (n_steps + 1, n_agents, 2):
            raise MalformedRolloutError(
                f"agent_positions shape {agents.shape} != {(n_steps + 1, n_agents, 2)}"
            )
        preds = self.predictions
        if preds is None:
            # oracle one-step predictions: the realized next positions
            preds = agents[1:, :, None, :].copy()
        preds = np.asarray(preds, dtype=float)
        if preds.ndim != 4 or preds.shape[:2] != (n_steps, n_agents) or preds.shape[3] != 2:
            raise MalformedRolloutError(f"predictions shape {preds.shape} incompatible with rollout")
        if n_agents and preds.shape[2] < 1:
            raise MissingPredictionError("rollout predictions have zero horizon")
        for name, arr in (("ego_states", ego), ("controls", ctrl), ("agents", agents), ("predictions", preds)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"rollout {name} contain non-finite values")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise MalformedRolloutError(f"dt must be > 0, got {self.dt}")
        object.__setattr__(self, "ego_states", ego)
        object.__setattr__(self, "controls", ctrl)
        object.__setattr__(self, "agent_ids", tuple(self.agent_ids))
        object.__setattr__(self, "agent_positions", agents)
        object.__setattr__(self, "predictions", preds)

    @property
    def n_steps(self) -> int:
        return len(self.controls)

    def first_predictions(self) -> np.ndarray:
        return self.predictions[:, :, 0, :]

    def snapshot(self, t: int) -> SceneSnapshot:
        """Scene used to score control ``t``: ego at ``s[t + 1]``, agents at time ``t``."""
        return SceneSnapshot(
            ego=EgoState.from_array(self.ego_states[t + 1]),
            agents=tuple((aid, tuple(self.agent_positions[t, i])) for i, aid in enumerate(self.agent_ids)),
            predictions={aid: self.predictions[t, i] for i, aid in enumerate(self.agent_ids)},
        )

    def with_controls(self, controls, omega_eps=DEFAULT_OMEGA_EPS) -> "Rollout":
        """Copy with new controls and re-integrated ego states."""
        controls = np.asarray(controls, dtype=float).reshape(-1, 2)
        states = rollout_states_array(self.ego_states[0], controls, self.dt, omega_eps)
        return Rollout(self.dt, states, controls, self.agent_ids, self.agent_positions, self.predictions)


# -- array kernels ---------------------------------------------------------


def step_features_array(pos, controls, agents, preds, goal, bw):
    """Per-step features and their position gradients.

    pos, controls: (..., T, 2); agents, preds: (T, n, 2) (broadcastable).
    Returns phi (..., T, 4) and dphi/dpos (..., T, 4, 2).
    """
    pos = np.asarray(pos, dtype=float)
    controls = np.asarray(controls, dtype=float)
    goal = np.asarray(goal, dtype=float)
    inv2 = 1.0 / (bw * bw)
    shape = np.broadcast_shapes(pos.shape[:-1], controls.shape[:-1])
    phi = np.empty(shape + (4,))
    grad = np.zeros(shape + (4, 2))

    to_goal = pos - goal
    phi[..., 0] = np.sum(to_goal * to_goal, axis=-1)
    grad[..., 0, :] = 2.0 * to_goal
    phi[..., 1] = np.sum(controls * controls, axis=-1)
    for k, centers in ((2, agents), (3, preds)):
        diff = pos[..., None, :] - centers  # (..., T, n, 2)
        kern = np.exp(-0.5 * np.sum(diff * diff, axis=-1) * inv2)
        phi[..., k] = kern.sum(axis=-1)
        grad[..., k, :] = -inv2 * np.sum(kern[..., None] * diff, axis=-2)
    return phi, grad


def trajectory_features_array(initial, controls, agents, preds, dt, cfg: FeatureConfig,
                              omega_eps=DEFAULT_OMEGA_EPS, with_grad=True):
    """Summed features over a control sequence and their control gradients.

    controls: (..., T, 2). Returns (totals (..., 4), grads (..., 4, T, 2) or None).
    Gradients are propagated through the dynamics with a reverse (adjoint)
    sweep over the step Jacobians.
    """
    controls = np.asarray(controls, dtype=float)
    states = rollout_states_array(initial, controls, dt, omega_eps)
    phi, dpos = step_features_array(states[..., 1:, :2], controls, agents, preds, cfg.goal, cfg.rbf_bandwidth)
    totals = phi.sum(axis=-2)
    if not with_grad:
        return totals, None
    a_mat, b_mat = jacobians_dynamic_array(states[..., :-1, :], controls, dt, omega_eps)
    n_steps = controls.shape[-2]
    lead = totals.shape[:-1]
    grads = np.empty(lead + (4, n_steps, 2))
    costate = np.zeros(lead + (4, 3))
    for t in range(n_steps - 1, -1, -1):
        costate[..., :2] += dpos[..., t, :, :]
        grads[..., t, :] = costate @ b_mat[..., t, :, :]
        grads[..., 1, t, :] += 2.0 * controls[..., t, :]
        costate = costate @ a_mat[..., t, :, :]
    return totals, grads


# -- snapshot-level operations ---------------------------------------------


def _as_control(u) -> np.ndarray:
    return u.as_array() if isinstance(u, Control) else np.asarray(u, dtype=float).reshape(2)


def _theta(theta) -> np.ndarray:
    return theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, dtype=float)


def features(snap: SceneSnapshot, u: Control, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    cur, first = snap.arrays()
    pos = np.array([snap.ego.x, snap.ego.y])
    phi, _ = step_features_array(pos, _as_control(u), cur, first, cfg.goal, cfg.rbf_bandwidth)
    return FeatureVector(*(float(v) for v in phi))


def cost(theta: CostWeights, snap: SceneSnapshot, u: Control, cfg: FeatureConfig = FeatureConfig()) -> float:
    return float(_theta(theta) @ features(snap, u, cfg).as_array())


def grad_cost_controls(theta, snap: SceneSnapshot, u: Control, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Gradient of the instantaneous cost in (speed, turn_rate); only the control term depends on u."""
    snap.arrays()  # validates predictions
    return 2.0 * _theta(theta)[1] * _as_control(u)


def grad_cost_predictions(theta, snap: SceneSnapshot, u: Control,
                          cfg: FeatureConfig = FeatureConfig()) -> dict[str, np.ndarray]:
    """Gradient of the instantaneous cost with respect to each agent's predicted positions.

    Returns ``agent_id -> (P, 2)``; only the first predicted step is nonzero.
    """
    cur, first = snap.arrays()
    w_pred = _theta(theta)[3]
    ego = np.array([snap.ego.x, snap.ego.y])
    bw2 = cfg.rbf_bandwidth ** 2
    out = {}
    for i, (aid, _) in enumerate(snap.agents):
        horizon = np.asarray(snap.predictions[aid]).reshape(-1, 2)
        g = np.zeros_like(horizon, dtype=float)
        diff = ego - first[i]
        g[0] = w_pred * np.exp(-0.5 * (diff @ diff) / bw2) * diff / bw2
        out[aid] = g
    return out


# -- rollout-level operations ----------------------------------------------


def _rollout_arrays(rollout: Rollout):
    return rollout.ego_states[0], rollout.agent_positions[:-1], rollout.first_predictions()


def trajectory_features(rollout: Rollout, cfg: FeatureConfig = FeatureConfig(), controls=None,
                        omega_eps=DEFAULT_OMEGA_EPS, with_grad=True):
    """Summed features (4,) and per-feature flat control gradients (4, 2T)."""
    if not isinstance(rollout, Rollout):
        raise MalformedRolloutError(f"expected a Rollout, got {type(rollout).__name__}")
    init, agents, preds = _rollout_arrays(rollout)
    ctrl = rollout.controls if controls is None else np.asarray(controls, dtype=float)
    if ctrl.shape[-2:] != rollout.controls.shape:
        raise MalformedRolloutError(f"controls shape {ctrl.shape} != {rollout.controls.shape}")
    totals, grads = trajectory_features_array(init, ctrl, agents, preds, rollout.dt, cfg, omega_eps, with_grad)
    if grads is not None:
        grads = grads.reshape(grads.shape[:-2] + (-1,))
    return totals, grads


def trajectory_cost(theta, rollout: Rollout, cfg: FeatureConfig = FeatureConfig()) -> float:
    totals, _ = trajectory_features(rollout, cfg, with_grad=False)
    return float(_theta(theta) @ totals)


def trajectory_cost_control_gradient(theta, rollout: Rollout, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Exact gradient of :func:`trajectory_cost` over the stacked controls (length 2T)."""
    _, grads = trajectory_features(rollout, cfg)
    return _theta(theta) @ grads


def snapshot_sequence(rollout: Rollout) -> Sequence[SceneSnapshot]:
    return [rollout.snapshot(t) for t in range(rollout.n_steps)]
