"""Per-line evaluation of scene records into planning-informed metric rows."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .cost_model import CostWeights
from .metrics import METRIC_NAMES, SCHEME_NAMES, WeightingScheme, evaluate_metric, scheme_factors
from .scene_io import SceneRecord
from .sensitivity import SensitivityConfig, sensitivity_of_trajectory


@dataclass(frozen=True)
class MetricRow:
    scene_id: str
    agent_id: str
    candidate_id: str
    metric_name: str
    plain_value: float
    g: float
    g_gt: float
    scheme: str
    pi_value: float


def _check_names(metrics: Sequence[str], schemes: Sequence[str]) -> None:
    for m in metrics:
        if m not in METRIC_NAMES:
            raise KeyError(f"unknown metric {m!r}; expected one of {METRIC_NAMES}")
    for s in schemes:
        if s not in SCHEME_NAMES:
            raise KeyError(f"unknown scheme {s!r}; expected one of {SCHEME_NAMES}")


def evaluate_scene(record: SceneRecord, theta: CostWeights, metrics: Sequence[str], schemes: Sequence[str],
                   cfg: SensitivityConfig = SensitivityConfig()) -> list[MetricRow]:
    """Rows for every (agent, candidate, metric, scheme) the record supports.

    Sensitivity-normalizing schemes (norm, softmax) pool the agents that share
    a candidate id, so f(a, g) compares one prediction source across agents.
    Metrics that do not apply to a candidate's representation are skipped.
    """
    _check_names(metrics, schemes)
    rollout = record.to_rollout()
    g_gt = {aid: sensitivity_of_trajectory(theta, rollout, gt, cfg) for aid, gt in record.gt_futures.items()}
    g_cand: dict[str, dict[str, float]] = {}
    for aid, cands in record.candidates.items():
        for cid, pred in cands:
            g_cand.setdefault(cid, {})[aid] = sensitivity_of_trajectory(theta, rollout, pred.representative(), cfg)
    factors = {
        (cid, scheme): scheme_factors(g, WeightingScheme(scheme, g_gt if scheme == "gt_excess" else None))
        for cid, g in g_cand.items()
        for scheme in schemes
    }
    rows = []
    for aid, cands in record.candidates.items():
        gt = record.gt_futures[aid]
        for cid, pred in cands:
            for metric in metrics:
                value = evaluate_metric(metric, pred, gt)
                if value is None:
                    continue
                for scheme in schemes:
                    f = factors[(cid, scheme)][aid]
                    rows.append(MetricRow(record.scene_id, aid, cid, metric, value,
                                          g_cand[cid][aid], g_gt[aid], scheme, f * value))
    return rows


def _job(args):
    record, theta, metrics, schemes, cfg = args
    try:
        return evaluate_scene(record, theta, metrics, schemes, cfg)
    except (ValueError, KeyError, ArithmeticError) as exc:
        return exc


def evaluate_records(records: Iterable[SceneRecord], theta: CostWeights, metrics: Sequence[str],
                     schemes: Sequence[str], cfg: SensitivityConfig = SensitivityConfig(), workers: int = 1):
    """Ordered map over records; yields a row list or the exception for each record."""
    _check_names(metrics, schemes)
    jobs = ((rec, theta, tuple(metrics), tuple(schemes), cfg) for rec in records)
    if workers <= 1:
        yield from map(_job, jobs)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_job, jobs, chunksize=4)
