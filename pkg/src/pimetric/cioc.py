"""Continuous inverse optimal control for the linear planning cost.

Demonstrations are assumed locally optimal only. Each rollout's control
sequence ``u`` (stacked, dimension d = 2T) is scored with the Laplace
approximation of the maximum-entropy likelihood ``p(u) ~ exp(-C(u))``:

    LL = -1/2 g^T H^-1 g + 1/2 log det H - d/2 log(2 pi)

with ``g`` and ``H`` the gradient and Hessian of the trajectory cost over
the controls. Because the cost is linear in the weights, ``g`` and ``H``
are linear too, so per-feature gradients and Hessians are computed once per
rollout and every likelihood evaluation afterwards is plain linear algebra.
Weights are optimized in log space, ``theta = exp(eta)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cost_model import (
    FEATURE_NAMES,
    CostWeights,
    FeatureConfig,
    Rollout,
    trajectory_features,
)
from .errors import EmptyInputError, IllConditionedError, InvalidInputError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LearnConfig:
    hessian_fd_step: float = 1e-4
    pd_regularizer: float = 1e-6
    max_iterations: int = 500
    tolerance: float = 1e-6
    initial_log_weights: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    # largest change of any log-weight in one iteration
    max_log_step: float = 2.0

    def __post_init__(self):
        for name in ("hessian_fd_step", "pd_regularizer", "tolerance", "max_log_step"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise InvalidInputError(f"{name} must be > 0, got {val}")
        if int(self.max_iterations) < 1:
            raise InvalidInputError("max_iterations must be a positive integer")
        if len(self.initial_log_weights) != 4 or not np.all(np.isfinite(self.initial_log_weights)):
            raise InvalidInputError("initial_log_weights must be 4 finite numbers")


@dataclass(frozen=True)
class RolloutDerivatives:
    """Per-feature control gradient (4, d) and Hessian (4, d, d) of one rollout."""

    gradients: np.ndarray
    hessians: np.ndarray

    @property
    def dim(self) -> int:
        return self.gradients.shape[1]


@dataclass
class LearnResult:
    weights: CostWeights
    converged: bool
    iterations: int
    log_likelihood: float
    flat_directions: tuple[str, ...] = ()
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def to_json_dict(self) -> dict:
        w = self.weights
        return {
            "goal": w.w_goal,
            "control": w.w_control,
            "rbf_current": w.w_rbf_current,
            "rbf_pred": w.w_rbf_pred,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


def _theta(theta) -> np.ndarray:
    return theta.as_array() if isinstance(theta, CostWeights) else np.asarray(theta, dtype=float)


def feature_derivatives(rollout: Rollout, feat_cfg: FeatureConfig = FeatureConfig(),
                        fd_step: float = 1e-4) -> RolloutDerivatives:
    """Per-feature gradients and finite-difference Hessians at the demonstrated controls.

    Each Hessian column is a central difference of the analytic gradient; all
    2d perturbed control sequences go through one batched adjoint sweep.
    """
    _, grad = trajectory_features(rollout, feat_cfg)
    dim = grad.shape[1]
    base = rollout.controls.reshape(-1)
    step = fd_step * np.eye(dim)
    batch = np.concatenate([base + step, base - step]).reshape(2 * dim, -1, 2)
    _, g_batch = trajectory_features(rollout, feat_cfg, controls=batch)
    diff = (g_batch[:dim] - g_batch[dim:]) / (2.0 * fd_step)  # (d_j, 4, d_i)
    hess = np.transpose(diff, (1, 2, 0))
    hess = 0.5 * (hess + np.transpose(hess, (0, 2, 1)))
    return RolloutDerivatives(grad, hess)


def hessian_controls(theta, rollout: Rollout, cfg: LearnConfig = LearnConfig(),
                     feat_cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Symmetrized finite-difference Hessian of the trajectory cost over stacked controls."""
    derivs = feature_derivatives(rollout, feat_cfg, cfg.hessian_fd_step)
    return np.tensordot(_theta(theta), derivs.hessians, axes=1)


def _factor(hess: np.ndarray, reg: float):
    try:
        return cho_factor(hess, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        pass
    shifted = hess + reg * np.eye(len(hess))
    try:
        return cho_factor(shifted, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        eig = np.linalg.eigvalsh(shifted) if np.all(np.isfinite(shifted)) else np.array([np.nan])
        raise IllConditionedError(float(eig.min()))


def _laplace(theta: np.ndarray, derivs: RolloutDerivatives, reg: float, need_grad: bool):
    g = theta @ derivs.gradients
    hess = np.tensordot(theta, derivs.hessians, axes=1)
    factor = _factor(hess, reg)
    k = cho_solve(factor, g)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    ll = -0.5 * g @ k + 0.5 * logdet - 0.5 * derivs.dim * LOG_2PI
    if not need_grad:
        return ll, None
    h_inv = cho_solve(factor, np.eye(derivs.dim))
    d_theta = (
        -derivs.gradients @ k
        + 0.5 * np.einsum("i,fij,j->f", k, derivs.hessians, k)
        + 0.5 * np.einsum("ij,fij->f", h_inv, derivs.hessians)
    )
    return ll, d_theta


def laplace_log_likelihood(theta, rollout: Rollout, cfg: LearnConfig = LearnConfig(),
                           feat_cfg: FeatureConfig = FeatureConfig()) -> float:
    """Laplace-approximated log-likelihood of the rollout's controls under ``theta``."""
    th = _theta(theta)
    if np.any(th < 0):
        raise InvalidInputError("weights must be nonnegative")
    derivs = feature_derivatives(rollout, feat_cfg, cfg.hessian_fd_step)
    return float(_laplace(th, derivs, cfg.pd_regularizer, need_grad=False)[0])


def log_likelihood_and_grad(eta, derivs: Sequence[RolloutDerivatives], reg: float):
    """Summed LL over rollouts and its gradient with respect to log-weights ``eta``."""
    theta = np.exp(np.asarray(eta, dtype=float))
    total = 0.0
    grad = np.zeros(4)
    for d in derivs:
        ll, d_theta = _laplace(theta, d, reg, need_grad=True)
        total += ll
        grad += d_theta
    return float(total), grad * theta


def _flat_directions(derivs: Sequence[RolloutDerivatives], rel: float = 1e-10) -> tuple[str, ...]:
    scale = np.zeros(4)
    for d in derivs:
        scale = np.maximum(scale, np.abs(d.gradients).max(axis=1))
        scale = np.maximum(scale, np.abs(d.hessians).reshape(4, -1).max(axis=1))
    ref = scale.max() if scale.max() > 0 else 1.0
    return tuple(name for name, s in zip(FEATURE_NAMES, scale) if s <= rel * ref)


def learn_weights(rollouts: Sequence[Rollout], cfg: LearnConfig = LearnConfig(),
                  feat_cfg: FeatureConfig = FeatureConfig()) -> LearnResult:
    """Maximize the summed Laplace log-likelihood over log-weights.

    Quasi-Newton (BFGS) ascent with Armijo backtracking; iterates where the
    Hessian cannot be made positive definite are rejected by the line search.
    """
    rollouts = list(rollouts)
    if not rollouts:
        raise EmptyInputError("learn_weights needs at least one rollout")
    derivs = [feature_derivatives(r, feat_cfg, cfg.hessian_fd_step) for r in rollouts]
    flat = _flat_directions(derivs)
    reg = cfg.pd_regularizer

    def objective(eta):
        try:
            return log_likelihood_and_grad(eta, derivs, reg)
        except IllConditionedError:
            return -np.inf, None

    eta = np.array(cfg.initial_log_weights, dtype=float)
    ll, grad = objective(eta)
    # the control feature contributes 2I to every Hessian, so raising its weight restores definiteness
    bumps = 0
    while grad is None and bumps < 20:
        eta[1] += 1.0
        bumps += 1
        ll, grad = objective(eta)
    if grad is None:
        raise IllConditionedError(np.nan, "no feasible starting weights: Hessians stay indefinite")
    inv_hess = np.eye(4)
    converged = False
    iteration = 0
    # tolerance applies to the per-rollout mean gradient so it does not drift below roundoff with more data
    scale = 1.0 / len(derivs)
    stalls = 0
    for iteration in range(1, int(cfg.max_iterations) + 1):
        if np.max(np.abs(grad)) * scale < cfg.tolerance:
            converged = True
            iteration -= 1
            break
        direction = inv_hess @ grad
        if direction @ grad <= 0:
            inv_hess = np.eye(4)
            direction = grad.copy()
        biggest = np.max(np.abs(direction))
        if biggest > cfg.max_log_step:
            direction *= cfg.max_log_step / biggest
        slope = direction @ grad
        alpha = 1.0
        while True:
            trial = eta + alpha * direction
            ll_new, grad_new = objective(trial)
            if grad_new is not None and ll_new >= ll + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                break
        if grad_new is None or alpha < 1e-12:
            logger.info("line search stalled at iteration %d", iteration)
            break
        stalls = stalls + 1 if ll_new - ll <= 1e-13 * max(1.0, abs(ll)) else 0
        if stalls >= 3:
            eta, ll, grad = trial, ll_new, grad_new
            logger.info("no further likelihood progress at iteration %d", iteration)
            converged = bool(np.max(np.abs(grad)) * scale < 10.0 * cfg.tolerance)
            break
        step = trial - eta
        y = grad_new - grad  # gradient change of the ascent objective
        sy = -(step @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            eye = np.eye(4)
            left = eye + rho * np.outer(step, y)
            inv_hess = left @ inv_hess @ left.T + rho * np.outer(step, step)
        eta, ll, grad = trial, ll_new, grad_new
    else:
        converged = bool(np.max(np.abs(grad)) * scale < cfg.tolerance)

    if flat:
        logger.info("flat directions (no data support): %s", ", ".join(flat))
    return LearnResult(
        weights=CostWeights.from_array(np.exp(eta)),
        converged=converged,
        iterations=iteration,
        log_likelihood=ll,
        flat_directions=flat,
        gradient=grad,
    )
