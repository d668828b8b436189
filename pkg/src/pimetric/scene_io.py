"""JSONL scene records, weight files and CSV metric reports.

One scene per line::

    {"scene_id": "...", "dt": 0.1,
     "ego": [[x, y, heading], ...],            # T + 1 states
     "ego_controls": [[speed, turn_rate], ...], # T controls
     "agents": [{"id": "a", "states": [[x, y], ...]}],   # T + 1 positions each
     "gt_futures": {"a": [[x, y], ...]},        # H <= T steps, aligned with ego[1:]
     "candidates": {"a": [{"candidate_id": "c", "trajectory": [[x, y], ...]},
                          {"candidate_id": "g", "gaussians": [{"mean": [x, y], "cov": [[..], [..]]}]},
                          {"candidate_id": "s", "samples": [[[x, y], ...], ...]}]},
     "predictions": {"a": [[[x, y], ...], ...]}}  # optional, T x P one-step-ahead forecasts

Units are meters, seconds and radians. Floats are written with 17
significant digits so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

import numpy as np

from .cioc import LearnResult
from .cost_model import CostWeights, Rollout
from .errors import (
    LengthMismatchError,
    MalformedJSONError,
    MissingFieldError,
    NonFiniteNumberError,
    SchemaError,
)
from .metrics import PredictionOutput

REPORT_COLUMNS = (
    "scene_id", "agent_id", "candidate_id", "metric_name",
    "plain_value", "g", "g_gt", "scheme", "pi_value",
)


# -- serialization helpers ---------------------------------------------------


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def dumps(obj: Any) -> str:
    """Compact, deterministic JSON with 17-significant-digit floats."""
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + dumps(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# -- record type -------------------------------------------------------------


@dataclass(eq=False)
class SceneRecord:
    scene_id: str
    dt: float
    ego: np.ndarray
    ego_controls: np.ndarray
    agents: list[tuple[str, np.ndarray]]
    gt_futures: dict[str, np.ndarray]
    candidates: dict[str, list[tuple[str, PredictionOutput]]]
    predictions: dict[str, np.ndarray] | None = field(default=None)

    def to_json_dict(self) -> dict:
        out = {
            "scene_id": self.scene_id,
            "dt": float(self.dt),
            "ego": self.ego.tolist(),
            "ego_controls": self.ego_controls.tolist(),
            "agents": [{"id": aid, "states": st.tolist()} for aid, st in self.agents],
            "gt_futures": {aid: gt.tolist() for aid, gt in self.gt_futures.items()},
            "candidates": {
                aid: [_candidate_json(cid, pred) for cid, pred in cands]
                for aid, cands in self.candidates.items()
            },
        }
        if self.predictions is not None:
            out["predictions"] = {aid: p.tolist() for aid, p in self.predictions.items()}
        return out

    def __eq__(self, other):
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return self.to_json_dict() == other.to_json_dict()

    def to_rollout(self) -> Rollout:
        ids = tuple(aid for aid, _ in self.agents)
        n_steps = len(self.ego_controls)
        positions = np.stack([st for _, st in self.agents], axis=1) if ids else np.zeros((n_steps + 1, 0, 2))
        preds = None
        if self.predictions is not None and ids:
            preds = np.stack([self.predictions[aid] for aid in ids], axis=1)
        return Rollout(self.dt, self.ego, self.ego_controls, ids, positions, preds)


def _candidate_json(cid: str, pred: PredictionOutput) -> dict:
    if pred.kind == "trajectory":
        return {"candidate_id": cid, "trajectory": pred.trajectory.tolist()}
    if pred.kind == "gaussians":
        return {
            "candidate_id": cid,
            "gaussians": [{"mean": m.tolist(), "cov": c.tolist()} for m, c in zip(pred.means, pred.covariances)],
        }
    return {"candidate_id": cid, "samples": pred.samples.tolist()}


def write_scene(record: SceneRecord) -> str:
    return dumps(record.to_json_dict())


# -- parsing -------------------------------------------------------------------


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise MissingFieldError(f"{path}.{key}", f"missing required field {key!r}")
    return obj[key]


def _number(val, path) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(val).__name__}")
    if not math.isfinite(val):
        raise NonFiniteNumberError(path, f"non-finite number {val}")
    return float(val)


def _array(val, path, shape: tuple) -> np.ndarray:
    """Validate a nested list against ``shape`` (None = any length >= 0) and convert."""

    def walk(v, p, dims):
        if not dims:
            return _number(v, p)
        if not isinstance(v, list):
            raise SchemaError(p, f"expected a list, got {type(v).__name__}")
        if dims[0] is not None and len(v) != dims[0]:
            raise SchemaError(p, f"expected {dims[0]} entries, got {len(v)}")
        return [walk(x, f"{p}[{i}]", dims[1:]) for i, x in enumerate(v)]

    data = walk(val, path, shape)
    arr = np.array(data, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(tuple(0 if d is None else d for d in shape))
    return arr


def _string(val, path) -> str:
    if not isinstance(val, str) or not val:
        raise SchemaError(path, "expected a non-empty string")
    return val


def _parse_candidate(obj, path, horizon) -> tuple[str, PredictionOutput]:
    if not isinstance(obj, dict):
        raise SchemaError(path, "candidate must be an object")
    cid = _string(_require(obj, "candidate_id", path), f"{path}.candidate_id")
    kinds = [k for k in ("trajectory", "gaussians", "samples") if k in obj]
    if len(kinds) != 1:
        raise SchemaError(path, f"candidate needs exactly one of trajectory|gaussians|samples, got {kinds}")
    kind = kinds[0]
    kpath = f"{path}.{kind}"
    if kind == "trajectory":
        traj = _array(obj[kind], kpath, (None, 2))
        if len(traj) != horizon:
            raise LengthMismatchError(kpath, f"candidate horizon {len(traj)} != ground-truth horizon {horizon}")
        return cid, PredictionOutput(trajectory=traj)
    if kind == "gaussians":
        items = obj[kind]
        if not isinstance(items, list):
            raise SchemaError(kpath, "expected a list")
        if len(items) != horizon:
            raise LengthMismatchError(kpath, f"candidate horizon {len(items)} != ground-truth horizon {horizon}")
        means, covs = [], []
        for i, item in enumerate(items):
            ipath = f"{kpath}[{i}]"
            if not isinstance(item, dict):
                raise SchemaError(ipath, "expected an object with mean and cov")
            means.append(_array(_require(item, "mean", ipath), f"{ipath}.mean", (2,)))
            covs.append(_array(_require(item, "cov", ipath), f"{ipath}.cov", (2, 2)))
        return cid, PredictionOutput(means=np.array(means).reshape(-1, 2), covariances=np.array(covs).reshape(-1, 2, 2))
    samples = _array(obj[kind], kpath, (None, None, 2))
    if samples.shape[1] != horizon:
        raise LengthMismatchError(kpath, f"sample horizon {samples.shape[1]} != ground-truth horizon {horizon}")
    if len(samples) < 1:
        raise SchemaError(kpath, "need at least one sample")
    return cid, PredictionOutput(samples=samples)


def parse_scene(line: str) -> SceneRecord:
    """Parse and validate one JSONL line; errors name the first failing JSON path."""
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJSONError("$", f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedJSONError("$", "scene must be a JSON object")
    scene_id = _string(_require(obj, "scene_id", "$"), "$.scene_id")
    dt = _number(_require(obj, "dt", "$"), "$.dt")
    if dt <= 0:
        raise SchemaError("$.dt", "dt must be > 0")
    ego = _array(_require(obj, "ego", "$"), "$.ego", (None, 3))
    controls = _array(_require(obj, "ego_controls", "$"), "$.ego_controls", (None, 2))
    if len(controls) < 1:
        raise LengthMismatchError("$.ego_controls", "need at least one control")
    if len(ego) != len(controls) + 1:
        raise LengthMismatchError(
            "$.ego_controls", f"|ego| = {len(ego)} must equal |ego_controls| + 1 = {len(controls) + 1}"
        )
    n_states = len(ego)

    raw_agents = _require(obj, "agents", "$")
    if not isinstance(raw_agents, list):
        raise SchemaError("$.agents", "expected a list")
    agents = []
    for i, ag in enumerate(raw_agents):
        path = f"$.agents[{i}]"
        if not isinstance(ag, dict):
            raise SchemaError(path, "expected an object")
        aid = _string(_require(ag, "id", path), f"{path}.id")
        if any(aid == a for a, _ in agents):
            raise SchemaError(f"{path}.id", f"duplicate agent id {aid!r}")
        states = _array(_require(ag, "states", path), f"{path}.states", (None, 2))
        if len(states) != n_states:
            raise LengthMismatchError(f"{path}.states", f"{len(states)} states, expected {n_states}")
        agents.append((aid, states))
    ids = [a for a, _ in agents]

    raw_gt = _require(obj, "gt_futures", "$")
    if not isinstance(raw_gt, dict):
        raise SchemaError("$.gt_futures", "expected an object")
    gt_futures = {}
    for aid, traj in raw_gt.items():
        path = f"$.gt_futures.{aid}"
        if aid not in ids:
            raise SchemaError(path, f"unknown agent id {aid!r}")
        gt = _array(traj, path, (None, 2))
        if not 1 <= len(gt) <= len(controls):
            raise LengthMismatchError(path, f"horizon {len(gt)} must be in [1, {len(controls)}]")
        gt_futures[aid] = gt

    raw_cands = _require(obj, "candidates", "$")
    if not isinstance(raw_cands, dict):
        raise SchemaError("$.candidates", "expected an object")
    candidates = {}
    for aid, cands in raw_cands.items():
        path = f"$.candidates.{aid}"
        if aid not in gt_futures:
            raise SchemaError(path, f"candidates for {aid!r} without a ground-truth future")
        if not isinstance(cands, list):
            raise SchemaError(path, "expected a list")
        parsed = [_parse_candidate(c, f"{path}[{i}]", len(gt_futures[aid])) for i, c in enumerate(cands)]
        cids = [c for c, _ in parsed]
        if len(set(cids)) != len(cids):
            raise SchemaError(path, f"duplicate candidate ids {cids}")
        candidates[aid] = parsed

    predictions = None
    if "predictions" in obj:
        raw_pred = obj["predictions"]
        if not isinstance(raw_pred, dict):
            raise SchemaError("$.predictions", "expected an object")
        if set(raw_pred) != set(ids):
            raise SchemaError("$.predictions", "predictions must cover exactly the listed agents")
        predictions = {}
        for aid in ids:
            path = f"$.predictions.{aid}"
            pred = _array(raw_pred[aid], path, (None, None, 2))
            if len(pred) != len(controls):
                raise LengthMismatchError(path, f"{len(pred)} prediction steps, expected {len(controls)}")
            if pred.shape[1] < 1:
                raise SchemaError(path, "prediction horizon must be >= 1")
            predictions[aid] = pred
        horizons = {p.shape[1] for p in predictions.values()}
        if len(horizons) > 1:
            raise LengthMismatchError("$.predictions", f"prediction horizons differ: {sorted(horizons)}")

    return SceneRecord(scene_id, dt, ego, controls, agents, gt_futures, candidates, predictions)


def iter_scene_lines(lines: Iterable[str]) -> Iterator[tuple[int, SceneRecord | Exception]]:
    """Yield (line number, record or the parse error) for each non-blank line."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield lineno, parse_scene(line)
        except (ValueError, KeyError) as exc:
            yield lineno, exc


def read_scenes(path) -> list[SceneRecord]:
    """Read every record, raising on the first invalid line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, rec in iter_scene_lines(fh):
            if isinstance(rec, Exception):
                raise rec
            out.append(rec)
    return out


def write_scenes(path, records: Iterable[SceneRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(write_scene(rec) + "\n")


def record_from_scenario(scenario) -> SceneRecord:
    r = scenario.rollout
    agents = [(aid, r.agent_positions[:, i].copy()) for i, aid in enumerate(r.agent_ids)]
    predictions = {aid: r.predictions[:, i].copy() for i, aid in enumerate(r.agent_ids)} if r.agent_ids else None
    candidates = {aid: list(cands.items()) for aid, cands in scenario.candidates.items()}
    return SceneRecord(
        scenario.scene_id, r.dt, r.ego_states.copy(), r.controls.copy(), agents,
        {aid: gt.copy() for aid, gt in scenario.gt_futures.items()}, candidates, predictions,
    )


# -- weights -----------------------------------------------------------------------


def dump_weights(result: LearnResult) -> str:
    return dumps(result.to_json_dict())


def load_weights(text: str) -> CostWeights:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJSONError("$", f"malformed weights JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedJSONError("$", "weights must be a JSON object")
    vals = [_number(_require(obj, k, "$"), f"$.{k}") for k in ("goal", "control", "rbf_current", "rbf_pred")]
    return CostWeights(*vals)


# -- CSV report ----------------------------------------------------------------------


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([
            row.scene_id, row.agent_id, row.candidate_id, row.metric_name,
            format_float(row.plain_value), format_float(row.g), format_float(row.g_gt),
            row.scheme, format_float(row.pi_value),
        ])
    return buf.getvalue()


def read_report(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise SchemaError("$", f"report header must be {','.join(REPORT_COLUMNS)}")
    rows = []
    for row in reader:
        for key in ("plain_value", "g", "g_gt", "pi_value"):
            row[key] = float(row[key])
        rows.append(row)
    return rows
