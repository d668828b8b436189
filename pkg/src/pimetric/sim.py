"""Scripted collision-avoidance scenes with a locally optimal expert ego.

The ego is a unicycle driving to the goal (origin by default). Other agents
move at constant velocity and do not react. The expert replans every step by
projected gradient descent on a short-horizon cost under known weights.

``random`` scenes are used as demonstrations for weight learning. There the
closed-loop expert trajectory is refined to a local minimum of the
whole-rollout cost, and the executed controls are then drawn from the
Laplace (Gaussian) approximation of the Boltzmann policy ``exp(-C(u))``
around that minimum. Without that draw, the demonstrations would sit exactly
at stationary points and the cost scale would not be identifiable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cost_model import CostWeights, EgoState, FeatureConfig, Rollout, SceneSnapshot, trajectory_features_array
from .dynamics import Control, rollout_states_array, step_dynamic_array
from .errors import InsufficientHistoryError, InvalidInputError
from .metrics import PredictionOutput

logger = logging.getLogger(__name__)

PRESETS = ("head_on", "passing", "random")
TRUE_WEIGHTS = CostWeights(1.0, 0.5, 2.0, 2.0)


@dataclass(frozen=True)
class ExpertConfig:
    horizon: int = 5
    iterations: int = 50
    step_size: float = 0.1
    speed_bounds: tuple[float, float] = (0.0, 2.0)
    turn_bounds: tuple[float, float] = (-1.0, 1.0)
    # after ``iterations`` steps, keep descending until the projected gradient is below
    # ``tolerance`` (checked every 10 steps) or ``max_iterations`` is reached
    tolerance: float = 2e-5
    max_iterations: int = 1000


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = "random"
    seed: int = 0
    num_agents: int = 5
    horizon: int = 40
    dt: float = 0.1
    true_weights: CostWeights = TRUE_WEIGHTS
    features: FeatureConfig = FeatureConfig()
    expert: ExpertConfig = ExpertConfig()
    prediction_horizon: int = 5
    # largest lateral deviation of the toward/away candidates (their FDE)
    candidate_offset: float = 0.15
    num_samples: int = 16
    # None: Boltzmann-sampled demonstrations for "random", deterministic expert otherwise
    maxent_demonstrations: bool | None = None
    newton_iterations: int = 40
    max_scene_redraws: int = 20
    # std of the expert predictor's per-step position error (meters); None: 1 bw for "random", 0 otherwise
    prediction_noise: float | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidInputError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if not (self.dt > 0):
            raise InvalidInputError("dt must be > 0")
        if self.horizon < 2:
            raise InvalidInputError("horizon must be >= 2")
        if self.num_agents < 1 or self.prediction_horizon < 1 or self.num_samples < 2:
            raise InvalidInputError("num_agents, prediction_horizon >= 1 and num_samples >= 2 required")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    @property
    def predictor_noise(self) -> float:
        if self.prediction_noise is None:
            return 1.0 * self.features.rbf_bandwidth if self.preset == "random" else 0.0
        return float(self.prediction_noise)

    @property
    def use_maxent(self) -> bool:
        if self.maxent_demonstrations is None:
            return self.preset == "random"
        return bool(self.maxent_demonstrations)


@dataclass(frozen=True, eq=False)
class CandidatePair:
    """Metrically equal candidates mirrored about the ground-truth path."""

    agent_id: str
    toward: np.ndarray
    away: np.ndarray


@dataclass(eq=False)
class Scenario:
    scene_id: str
    rollout: Rollout
    gt_futures: dict[str, np.ndarray]
    candidates: dict[str, dict[str, PredictionOutput]]
    pairs: dict[str, CandidatePair] = field(default_factory=dict)


# -- prediction baseline -----------------------------------------------------


def cv_predictor(history, dt: float, horizon: int) -> np.ndarray:
    """Constant-velocity extrapolation from the last two history points."""
    hist = np.asarray(history, dtype=float)
    if hist.ndim != 2 or hist.shape[1] != 2 or len(hist) < 2:
        raise InsufficientHistoryError(f"need at least 2 history points, got shape {hist.shape}")
    if dt <= 0 or horizon < 1:
        raise InvalidInputError("dt must be > 0 and horizon >= 1")
    pos = hist[-1]
    vel = (hist[-1] - hist[-2]) / dt
    steps = np.arange(1, horizon + 1, dtype=float)[:, None]
    return pos + vel * steps * dt


def _cv_predict_batch(prev, cur, horizon):
    # (..., n, 2) -> (..., n, P, 2); velocity * k * dt collapses to displacement * k
    steps = np.arange(1, horizon + 1, dtype=float)[:, None]
    return cur[..., None, :] + (cur - prev)[..., None, :] * steps


# -- expert ------------------------------------------------------------------


def _plan_centers(agents, preds, horizon):
    """Per-plan-step agent centers for the current and predicted RBF terms.

    agents: (..., n, 2) now; preds: (..., n, P, 2). Plan step k scores the
    ego at t + k + 1 against agents at t + k (now, or predicted) and the
    prediction for t + k + 1. Predictions shorter than needed hold their last value.
    """
    p = preds.shape[-2]
    idx_pred = np.minimum(np.arange(horizon), p - 1)
    pred_centers = np.moveaxis(preds[..., idx_pred, :], -2, -3)  # (..., K, n, 2)
    cur_centers = np.concatenate([agents[..., None, :, :], pred_centers[..., :-1, :, :]], axis=-3)
    return cur_centers, pred_centers


def _expert_descent(theta, initial, cur_centers, pred_centers, dt, feat_cfg, ecfg, warm):
    theta = np.asarray(theta, dtype=float)
    lo = np.array([ecfg.speed_bounds[0], ecfg.turn_bounds[0]])
    hi = np.array([ecfg.speed_bounds[1], ecfg.turn_bounds[1]])
    u = np.clip(warm, lo, hi)
    moving = np.ones(u.shape[:-2], dtype=bool)
    for it in range(max(ecfg.iterations, ecfg.max_iterations)):
        _, grads = trajectory_features_array(initial, u, cur_centers, pred_centers, dt, feat_cfg)
        g = np.einsum("f,...fti->...ti", theta, grads)
        step = np.clip(u - ecfg.step_size * g, lo, hi)
        if it >= ecfg.iterations and it % 10 == 0:
            # per-scene freeze keeps each result independent of what else is in the batch
            moving &= np.max(np.abs(u - np.clip(u - g, lo, hi)), axis=(-2, -1)) >= ecfg.tolerance
            if not moving.any():
                break
        u = np.where(moving[..., None, None], step, u)
    return u


def _snapshot_arrays(snap: SceneSnapshot, horizon: int):
    cur, _ = snap.arrays()
    n = len(snap.agents)
    p = max([len(np.asarray(snap.predictions[a]).reshape(-1, 2)) for a, _ in snap.agents], default=1)
    preds = np.zeros((n, p, 2))
    for i, (aid, _) in enumerate(snap.agents):
        preds[i] = np.asarray(snap.predictions[aid], dtype=float).reshape(-1, 2)
    return cur, preds


def expert_plan(theta, snap: SceneSnapshot, cfg: ScenarioConfig = ScenarioConfig(), warm_start=None) -> np.ndarray:
    """Receding-horizon control sequence (K, 2) minimizing the short-horizon cost."""
    theta = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, dtype=float)
    k = cfg.expert.horizon
    cur, preds = _snapshot_arrays(snap, k)
    cur_c, pred_c = _plan_centers(cur, preds, k)
    warm = np.zeros((k, 2)) if warm_start is None else np.asarray(warm_start, dtype=float)
    init = np.array([snap.ego.x, snap.ego.y, snap.ego.heading])
    return _expert_descent(theta, init, cur_c, pred_c, cfg.dt, cfg.features, cfg.expert, warm)


def expert_policy_step(theta, snap: SceneSnapshot, cfg: ScenarioConfig = ScenarioConfig(), warm_start=None) -> Control:
    return Control.from_array(expert_plan(theta, snap, cfg, warm_start)[0])


def plan_cost(theta, snap: SceneSnapshot, controls, cfg: ScenarioConfig = ScenarioConfig()) -> float:
    """Short-horizon cost the expert minimizes, for a control sequence (K, 2)."""
    theta = theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, dtype=float)
    controls = np.asarray(controls, dtype=float)
    cur, preds = _snapshot_arrays(snap, len(controls))
    cur_c, pred_c = _plan_centers(cur, preds, len(controls))
    init = np.array([snap.ego.x, snap.ego.y, snap.ego.heading])
    totals, _ = trajectory_features_array(init, controls, cur_c, pred_c, cfg.dt, cfg.features, with_grad=False)
    return float(totals @ theta)


def run_expert(theta, initial, agent_paths, cfg: ScenarioConfig, pred_errors=None):
    """Closed-loop expert over a batch of scenes.

    initial: (B, 3); agent_paths: (B, T + 2, n, 2) with index 0 at time -1;
    pred_errors: optional (B, T, n, 2) offsets added to every predicted step.
    Returns controls (B, T, 2), states (B, T + 1, 3), predictions (B, T, n, P, 2).
    """
    theta = np.asarray(theta, dtype=float)
    k, n_steps = cfg.expert.horizon, cfg.horizon
    batch = initial.shape[0]
    states = np.empty((batch, n_steps + 1, 3))
    states[:, 0] = initial
    controls = np.empty((batch, n_steps, 2))
    preds_all = np.empty((batch, n_steps) + agent_paths.shape[2:3] + (cfg.prediction_horizon, 2))
    warm = np.zeros((batch, k, 2))
    for t in range(n_steps):
        prev, cur = agent_paths[:, t], agent_paths[:, t + 1]
        preds = _cv_predict_batch(prev, cur, cfg.prediction_horizon)
        if pred_errors is not None:
            preds = preds + pred_errors[:, t, :, None, :]
        preds_all[:, t] = preds
        cur_c, pred_c = _plan_centers(cur, preds, k)
        plan = _expert_descent(theta, states[:, t], cur_c, pred_c, cfg.dt, cfg.features, cfg.expert, warm)
        controls[:, t] = plan[:, 0]
        states[:, t + 1] = step_dynamic_array(states[:, t], plan[:, 0], cfg.dt)
        warm = np.concatenate([plan[:, 1:], plan[:, -1:]], axis=1)
    return controls, states, preds_all


# -- whole-rollout refinement and Boltzmann sampling -----------------------


def _rollout_cost_derivs(theta, initial, controls, agents, preds1, dt, feat_cfg, fd_step=1e-4):
    """Cost (B,), gradient (B, d) and symmetrized FD Hessian (B, d, d) over stacked controls."""
    batch, n_steps = controls.shape[:2]
    dim = 2 * n_steps
    totals, grads = trajectory_features_array(initial[:, None, :], controls[:, None], agents[:, None],
                                              preds1[:, None], dt, feat_cfg)
    cost = totals[:, 0] @ theta
    grad = np.einsum("f,bfti->bti", theta, grads[:, 0]).reshape(batch, dim)
    eye = fd_step * np.eye(dim)
    pert = controls.reshape(batch, 1, dim) + np.concatenate([eye, -eye])[None]
    _, pg = trajectory_features_array(initial[:, None, :], pert.reshape(batch, 2 * dim, n_steps, 2),
                                      agents[:, None], preds1[:, None], dt, feat_cfg)
    pg = np.einsum("f,bjfti->bjti", theta, pg).reshape(batch, 2 * dim, dim)
    hess = np.swapaxes((pg[:, :dim] - pg[:, dim:]) / (2 * fd_step), 1, 2)
    hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    return cost, grad, hess


def _batch_cost(theta, initial, controls, agents, preds1, dt, feat_cfg):
    totals, _ = trajectory_features_array(initial, controls, agents, preds1, dt, feat_cfg, with_grad=False)
    return totals @ theta


def refine_to_local_minimum(theta, initial, controls, agents, preds1, dt, feat_cfg, iterations=40, tol=1e-9,
                            accept_grad=1e-5, accept_eig=1e-6):
    """Damped Newton on each scene's whole-rollout cost.

    Returns (controls, hessians, ok) where ``ok`` marks scenes that reached a
    strict local minimum (gradient below ``accept_grad``, Hessian eigenvalues
    above ``accept_eig``).
    """
    theta = np.asarray(theta, dtype=float)
    u = np.array(controls, dtype=float)
    batch, n_steps = u.shape[:2]
    dim = 2 * n_steps
    alphas = 0.5 ** np.arange(16)
    active = np.arange(batch)
    for _ in range(iterations):
        if active.size == 0:
            break
        ini, ag, pr = initial[active], agents[active], preds1[active]
        cost, grad, hess = _rollout_cost_derivs(theta, ini, u[active], ag, pr, dt, feat_cfg)
        moving = np.max(np.abs(grad), axis=1) > tol
        active, ini, ag, pr = active[moving], ini[moving], ag[moving], pr[moving]
        cost, grad, hess = cost[moving], grad[moving], hess[moving]
        if active.size == 0:
            break
        eig_min = np.linalg.eigvalsh(hess)[:, 0]
        shift = np.where(eig_min < 1e-3, 1e-3 - eig_min, 0.0)
        step = -np.linalg.solve(hess + shift[:, None, None] * np.eye(dim), grad[..., None])[..., 0]
        trial = u[active, None] + alphas[None, :, None, None] * step.reshape(-1, 1, n_steps, 2)
        trial_cost = _batch_cost(theta, ini[:, None], trial, ag[:, None], pr[:, None], dt, feat_cfg)
        decrease = np.einsum("bd,bd->b", grad, step)
        ok = trial_cost <= cost[:, None] + 1e-4 * alphas[None] * decrease[:, None]
        found = ok.any(axis=1)
        first = ok.argmax(axis=1)
        u[active[found]] = trial[np.flatnonzero(found), first[found]]
        active = active[found]
    _, grad, hess = _rollout_cost_derivs(theta, initial, u, agents, preds1, dt, feat_cfg)
    ok = (np.max(np.abs(grad), axis=1) < accept_grad) & (np.linalg.eigvalsh(hess)[:, 0] > accept_eig)
    return u, hess, ok


def boltzmann_sample(center, hessian, rng: np.random.Generator, min_eig: float = 1e-3) -> np.ndarray:
    """Draw from N(center, H^-1); H is shifted up to ``min_eig`` if it is not positive definite."""
    eig_min = np.linalg.eigvalsh(hessian)[0]
    if eig_min < min_eig:
        hessian = hessian + (min_eig - eig_min) * np.eye(len(hessian))
    chol = np.linalg.cholesky(hessian)
    eps = rng.standard_normal(center.size)
    return center + np.linalg.solve(chol.T, eps).reshape(center.shape)


def sample_locally_convex(theta, initial, center, hess, agents, preds1, dt, feat_cfg, rngs,
                          max_draws=50, min_eig=1e-6):
    """Boltzmann draws around each scene's mode, redrawn until the cost Hessian at the draw is PD.

    Draws landing in a non-convex region (which a Laplace likelihood cannot
    score) are rejected; after ``max_draws`` the mode itself is used.
    """
    batch = len(center)
    out = center.copy()
    pending = np.arange(batch)
    for _ in range(max_draws):
        if pending.size == 0:
            break
        draws = np.stack([boltzmann_sample(center[b], hess[b], rngs[b]) for b in pending])
        _, _, h = _rollout_cost_derivs(theta, initial[pending], draws, agents[pending], preds1[pending], dt, feat_cfg)
        ok = np.linalg.eigvalsh(h)[:, 0] > min_eig
        out[pending[ok]] = draws[ok]
        pending = pending[~ok]
    if pending.size:
        logger.info("%d scenes fell back to the cost mode", pending.size)
    return out


# -- scene construction ------------------------------------------------------


def _preset_geometry(preset: str, rng: np.random.Generator, cfg: ScenarioConfig):
    """Ego start (3,), agent start positions (n, 2), agent velocities (n, 2)."""
    bw = cfg.features.rbf_bandwidth
    goal = np.asarray(cfg.features.goal, dtype=float)
    if preset == "head_on":
        # oncoming agent on a slant; it passes the ego at about 1 m and crosses the
        # ego->goal segment behind it (x = -6.45 at t = 3.6 s)
        ego = np.array([goal[0] - 8.0, goal[1], 0.0])
        start = goal + np.array([-1.0, 2.0 * bw])
        vel = np.array([-1.5, -0.55 * bw])
        return ego, start[None], vel[None]
    if preset == "passing":
        ego = np.array([goal[0] - 8.0, goal[1], 0.0])
        start = goal + np.array([-1.0, 8.0 * bw])
        vel = np.array([-1.0, 0.0])
        return ego, start[None], vel[None]
    radius = rng.uniform(4.0, 8.0)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ego_xy = goal + radius * np.array([np.cos(angle), np.sin(angle)])
    heading = angle + np.pi + rng.normal(0.0, 0.3)
    n = cfg.num_agents
    frac = rng.uniform(0.2, 0.8, size=n)
    to_goal = goal - ego_xy
    normal = np.array([-to_goal[1], to_goal[0]]) / np.linalg.norm(to_goal)
    meet = ego_xy + frac[:, None] * to_goal + rng.normal(0.0, 1.0, size=n)[:, None] * normal
    speed = rng.uniform(1.0, 3.0, size=n)
    direction = rng.uniform(0.0, 2.0 * np.pi, size=n)
    vel = speed[:, None] * np.stack([np.cos(direction), np.sin(direction)], axis=1)
    lead = rng.uniform(0.5, 2.5, size=n)
    start = meet - vel * lead[:, None]
    return np.array([ego_xy[0], ego_xy[1], heading]), start, vel


def _agent_paths(start, vel, n_steps, dt):
    """Positions at times -1, 0, ..., n_steps: (n_steps + 2, n, 2)."""
    times = np.arange(-1, n_steps + 1, dtype=float) * dt
    return start[None] + times[:, None, None] * vel[None]


def _mirror_pair(gt, ego_future, offset):
    """Candidates gt +/- delta_k * normal with delta linear from 0 to ``offset``."""
    horizon = len(gt)
    heading = gt[-1] - gt[0]
    if np.linalg.norm(heading) < 1e-12:
        heading = np.array([1.0, 0.0])
    normal = np.array([-heading[1], heading[0]]) / np.linalg.norm(heading)
    if np.sum((ego_future[:horizon] - gt) @ normal) < 0:
        normal = -normal
    delta = offset * np.arange(horizon, dtype=float) / max(horizon - 1, 1)
    shift = delta[:, None] * normal
    return gt + shift, gt - shift


def _gaussian_candidate(history_prev, history_cur, horizon, rng, num_samples):
    means = _cv_predict_batch(history_prev, history_cur, horizon)
    sigma = 0.1 + 0.05 * np.arange(horizon, dtype=float)
    covs = (sigma ** 2)[:, None, None] * np.eye(2)
    samples = means[None] + sigma[None, :, None] * rng.standard_normal((num_samples, horizon, 2))
    return PredictionOutput(means=means, covariances=covs), PredictionOutput(samples=samples)


def _draw_scenes(cfg: ScenarioConfig, rngs):
    """Geometry, agent paths and expert predictor errors for each rng (in that draw order)."""
    geo, errors = [], []
    for rng in rngs:
        g = _preset_geometry(cfg.preset, rng, cfg)
        geo.append(g)
        if cfg.predictor_noise > 0:
            errors.append(cfg.predictor_noise * rng.standard_normal((cfg.horizon, len(g[1]), 2)))
    initial = np.stack([g[0] for g in geo])
    paths = np.stack([_agent_paths(g[1], g[2], cfg.horizon, cfg.dt) for g in geo])
    return initial, paths, (np.stack(errors) if errors else None)


def generate_scenarios(cfg: ScenarioConfig, count: int = 1) -> list[Scenario]:
    """``count`` scenes; scene i draws from ``default_rng([seed, i])``.

    For max-ent demonstrations, scenes whose expert rollout cannot be refined
    to a strict local minimum of the whole-rollout cost are redrawn from the
    same rng stream (at most ``max_scene_redraws`` times).
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    rngs = [np.random.default_rng([int(cfg.seed), i]) for i in range(count)]
    n_steps, dt = cfg.horizon, cfg.dt
    theta = cfg.true_weights.as_array()

    initial, paths, pred_errors = _draw_scenes(cfg, rngs)
    controls, states, preds = run_expert(theta, initial, paths, cfg, pred_errors)
    if cfg.use_maxent:
        pending = np.arange(count)
        center = np.empty_like(controls)
        hess = np.empty((count, 2 * n_steps, 2 * n_steps))
        for attempt in range(cfg.max_scene_redraws + 1):
            if attempt:
                ini, pth, err = _draw_scenes(cfg, [rngs[b] for b in pending])
                initial[pending], paths[pending] = ini, pth
                ctl, _, prd = run_expert(theta, ini, pth, cfg, err)
                controls[pending], preds[pending] = ctl, prd
            c, h, ok = refine_to_local_minimum(
                theta, initial[pending], controls[pending], paths[pending, 1:-1], preds[pending, :, :, 0, :],
                dt, cfg.features, iterations=cfg.newton_iterations,
            )
            center[pending], hess[pending] = c, h
            pending = pending[~ok]
            if pending.size == 0:
                break
        if pending.size:
            logger.warning("%d scenes kept without a strict local minimum", pending.size)
        controls = sample_locally_convex(theta, initial, center, hess, paths[:, 1:-1], preds[:, :, :, 0, :],
                                         dt, cfg.features, rngs)
        states = rollout_states_array(initial, controls, dt)
    n_agents = paths.shape[2]

    scenes = []
    ids = tuple(f"agent{i}" for i in range(n_agents))
    for b in range(count):
        rollout = Rollout(dt, states[b], controls[b], ids, paths[b, 1:], preds[b])
        gt_futures, candidates, pairs = {}, {}, {}
        for i, aid in enumerate(ids):
            gt = paths[b, 2:, i].copy()
            toward, away = _mirror_pair(gt, states[b, 1:, :2], cfg.candidate_offset)
            gauss, samples = _gaussian_candidate(paths[b, 0, i], paths[b, 1, i], n_steps, rngs[b], cfg.num_samples)
            gt_futures[aid] = gt
            pairs[aid] = CandidatePair(aid, toward, away)
            candidates[aid] = {
                "toward": PredictionOutput(trajectory=toward),
                "away": PredictionOutput(trajectory=away),
                "cv_gauss": gauss,
                "cv_samples": samples,
            }
        scene_id = f"{cfg.preset}-{int(cfg.seed)}-{b:04d}"
        scenes.append(Scenario(scene_id, rollout, gt_futures, candidates, pairs))
    return scenes


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    return generate_scenarios(cfg, 1)[0]


def with_preset(cfg: ScenarioConfig, preset: str, **kw) -> ScenarioConfig:
    return replace(cfg, preset=preset, **kw)
