"""Planning-informed metrics for trajectory forecasts.

A linear planning cost over ego controls is learned from demonstrations,
its gradient with respect to each agent's prediction measures how much the
planner cares about that agent, and classic accuracy metrics are reweighted
by those sensitivities.
"""

from __future__ import annotations

from .cioc import LearnConfig, LearnResult, laplace_log_likelihood, learn_weights
from .cost_model import CostWeights, FeatureConfig, Rollout, SceneSnapshot
from .dynamics import Control, EgoState, StepConfig
from .metrics import PredictionOutput, WeightingScheme, pi_wrap
from .sensitivity import SensitivityConfig, planning_sensitivity, sensitivity_of_trajectory

__all__ = [
    "Control",
    "CostWeights",
    "EgoState",
    "FeatureConfig",
    "LearnConfig",
    "LearnResult",
    "PredictionOutput",
    "Rollout",
    "SceneSnapshot",
    "SensitivityConfig",
    "StepConfig",
    "WeightingScheme",
    "laplace_log_likelihood",
    "learn_weights",
    "pi_wrap",
    "planning_sensitivity",
    "sensitivity_of_trajectory",
]

__version__ = "0.1.0"
