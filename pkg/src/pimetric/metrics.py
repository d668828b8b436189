"""Accuracy metrics for trajectory forecasts and the planning-informed wrapper.

Geometric metrics (ADE, FDE and their minimum-over-set variants) compare
point trajectories; probabilistic ones (Gaussian NLL, KDE NLL) score the
ground truth under a predicted density. :func:`pi_wrap` reweights any
per-agent metric by a function of planning sensitivities and averages over
agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import (
    EmptyInputError,
    InsufficientSamplesError,
    InvalidCovarianceError,
    InvalidInputError,
    ShapeError,
)

METRIC_NAMES = ("ade", "fde", "min_ade", "min_fde", "nll", "kde_nll")
SCHEME_NAMES = ("norm", "softmax", "gt_excess")

KDE_MIN_BANDWIDTH = 1e-3
DENSITY_FLOOR = 1e-300
NORM_DEGENERATE_SUM = 1e-12


@dataclass(frozen=True, eq=False)
class PredictionOutput:
    """One forecast for one agent.

    Exactly one representation is set: ``trajectory`` (H, 2); ``means`` (H, 2)
    with ``covariances`` (H, 2, 2); or ``samples`` (m, H, 2), which doubles as
    a trajectory set for min-over-set metrics and as KDE support points.
    """

    trajectory: np.ndarray | None = None
    means: np.ndarray | None = None
    covariances: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        set_fields = [n for n in ("trajectory", "means", "samples") if getattr(self, n) is not None]
        if len(set_fields) != 1:
            raise InvalidInputError(f"exactly one representation required, got {set_fields}")
        if (self.means is None) != (self.covariances is None):
            raise InvalidInputError("means and covariances go together")
        for name in ("trajectory", "means", "covariances", "samples"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float)
                if not np.all(np.isfinite(arr)):
                    raise InvalidInputError(f"{name} contains non-finite values")
                object.__setattr__(self, name, arr)
        if self.means is not None and self.covariances.shape != self.means.shape[:1] + (2, 2):
            raise ShapeError(f"covariances shape {self.covariances.shape} for means {self.means.shape}")

    @property
    def kind(self) -> str:
        if self.trajectory is not None:
            return "trajectory"
        return "gaussians" if self.means is not None else "samples"

    @property
    def horizon(self) -> int:
        return self.representative().shape[0]

    def representative(self) -> np.ndarray:
        """Single trajectory standing in for this output (the sample mean for sample sets)."""
        if self.trajectory is not None:
            return self.trajectory
        if self.means is not None:
            return self.means
        return self.samples.mean(axis=0)

    def trajectory_set(self) -> np.ndarray:
        if self.samples is not None:
            return self.samples
        return self.representative()[None]


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if gt.ndim != 2 or gt.shape[-1] != 2 or len(gt) == 0:
        raise ShapeError(f"ground truth must be (T, 2) with T >= 1, got {gt.shape}")
    if pred.shape[-2:] != gt.shape:
        raise ShapeError(f"prediction horizon {pred.shape} does not match ground truth {gt.shape}")
    return pred, gt


def ade(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def _set(preds, gt):
    preds = np.asarray(preds, dtype=float)
    if preds.ndim == 3 and len(preds) == 0:
        raise EmptyInputError("empty trajectory set")
    preds, gt = _pair(preds, gt)
    if preds.ndim != 3:
        raise ShapeError(f"trajectory set must be (k, T, 2), got {preds.shape}")
    return preds, gt


def min_ade_argmin(preds, gt) -> tuple[float, int]:
    preds, gt = _set(preds, gt)
    errs = np.linalg.norm(preds - gt, axis=-1).mean(axis=-1)
    idx = int(np.argmin(errs))  # first index on ties
    return float(errs[idx]), idx


def min_fde_argmin(preds, gt) -> tuple[float, int]:
    preds, gt = _set(preds, gt)
    errs = np.linalg.norm(preds[:, -1] - gt[-1], axis=-1)
    idx = int(np.argmin(errs))
    return float(errs[idx]), idx


def min_ade(preds, gt) -> float:
    return min_ade_argmin(preds, gt)[0]


def min_fde(preds, gt) -> float:
    return min_fde_argmin(preds, gt)[0]


def nll_gaussian(means, covariances, gt) -> float:
    """Mean over timesteps of -log N(gt_t; mean_t, cov_t)."""
    means, gt = _pair(means, gt)
    covs = np.asarray(covariances, dtype=float)
    if covs.shape != gt.shape[:1] + (2, 2):
        raise ShapeError(f"covariances must be (T, 2, 2), got {covs.shape}")
    if not np.allclose(covs, np.swapaxes(covs, -1, -2), rtol=1e-12, atol=0.0):
        raise InvalidCovarianceError("covariance matrices must be symmetric")
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise InvalidCovarianceError("covariance matrices must be positive definite") from exc
    resid = gt - means
    # forward substitution for the 2x2 lower factor
    z0 = resid[:, 0] / chol[:, 0, 0]
    z1 = (resid[:, 1] - chol[:, 1, 0] * z0) / chol[:, 1, 1]
    logdet = 2.0 * (np.log(chol[:, 0, 0]) + np.log(chol[:, 1, 1]))
    nll = 0.5 * (z0 * z0 + z1 * z1) + 0.5 * logdet + math.log(2.0 * math.pi)
    return float(nll.mean())


def kde_bandwidths(points) -> np.ndarray:
    """Scott's rule per axis for 2-D points, floored at ``KDE_MIN_BANDWIDTH``."""
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    std = points.std(axis=0, ddof=1)
    return np.maximum(std * m ** (-1.0 / 6.0), KDE_MIN_BANDWIDTH)


def kde_log_density(points, query) -> float:
    points = np.asarray(points, dtype=float)
    h = kde_bandwidths(points)
    z = (np.asarray(query, dtype=float) - points) / h
    log_kern = -0.5 * np.sum(z * z, axis=-1) - math.log(2.0 * math.pi) - np.sum(np.log(h))
    log_dens = logsumexp(log_kern) - math.log(len(points))
    return max(float(log_dens), math.log(DENSITY_FLOOR))


def kde_nll(samples, gt) -> float:
    """Per-step Gaussian-KDE negative log density of the ground truth, averaged over steps."""
    samples, gt = _pair(samples, gt)
    if samples.ndim != 3 or samples.shape[0] < 2:
        raise InsufficientSamplesError(f"kde_nll needs at least 2 samples, got shape {samples.shape}")
    return float(np.mean([-kde_log_density(samples[:, t], gt[t]) for t in range(len(gt))]))


def evaluate_metric(name: str, pred: PredictionOutput, gt) -> float | None:
    """Metric ``name`` of ``pred`` against ``gt``; None when the representation does not support it."""
    kind = pred.kind
    if name == "ade":
        return ade(pred.trajectory, gt) if kind == "trajectory" else None
    if name == "fde":
        return fde(pred.trajectory, gt) if kind == "trajectory" else None
    if name == "min_ade":
        return min_ade(pred.trajectory_set(), gt) if kind != "gaussians" else None
    if name == "min_fde":
        return min_fde(pred.trajectory_set(), gt) if kind != "gaussians" else None
    if name == "nll":
        return nll_gaussian(pred.means, pred.covariances, gt) if kind == "gaussians" else None
    if name == "kde_nll":
        return kde_nll(pred.samples, gt) if kind == "samples" else None
    raise KeyError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}")


# -- planning-informed weighting -------------------------------------------


@dataclass(frozen=True)
class WeightingScheme:
    """``name`` is one of norm | softmax | gt_excess; gt_excess needs ``g_gt`` per agent."""

    name: str = "gt_excess"
    g_gt: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.name not in SCHEME_NAMES:
            raise KeyError(f"unknown scheme {self.name!r}; expected one of {SCHEME_NAMES}")
        if self.name == "gt_excess":
            if self.g_gt is None:
                raise InvalidInputError("gt_excess scheme needs ground-truth sensitivities")
            if any(not np.isfinite(v) or v < 0 for v in self.g_gt.values()):
                raise InvalidInputError("ground-truth sensitivities must be finite and >= 0")


def scheme_factors(g: Mapping[str, float], scheme: WeightingScheme) -> dict[str, float]:
    """Per-agent multipliers f(a, g)."""
    agents = list(g)
    vals = np.array([float(g[a]) for a in agents])
    if scheme.name == "norm":
        total = vals.sum()
        if total < NORM_DEGENERATE_SUM:
            return {a: 1.0 for a in agents}
        return {a: 1.0 + v / total for a, v in zip(agents, vals)}
    if scheme.name == "softmax":
        ex = np.exp(vals - vals.max())
        return {a: 1.0 + e / ex.sum() for a, e in zip(agents, ex)}
    missing = set(agents) - set(scheme.g_gt)
    if missing:
        raise KeyError(f"no ground-truth sensitivity for agents {sorted(missing)}")
    return {a: 1.0 + max(0.0, v - float(scheme.g_gt[a])) for a, v in zip(agents, vals)}


def pi_wrap(per_agent_metric: Mapping[str, float], g: Mapping[str, float],
            scheme: WeightingScheme) -> float:
    """Planning-informed metric: agent mean of f(a, g) * metric_a."""
    if set(per_agent_metric) != set(g):
        raise KeyError(
            f"agent sets differ: metrics {sorted(per_agent_metric)} vs sensitivities {sorted(g)}"
        )
    if not per_agent_metric:
        raise EmptyInputError("pi_wrap needs at least one agent")
    f = scheme_factors(g, scheme)
    return float(sum(f[a] * float(per_agent_metric[a]) for a in per_agent_metric) / len(per_agent_metric))
