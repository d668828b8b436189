"""Command-line workflow: simulate -> learn -> eval -> report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .cioc import LearnConfig, learn_weights
from .errors import SceneParseError
from .evaluate import evaluate_records
from .metrics import METRIC_NAMES, SCHEME_NAMES
from .report import render_svg
from .scene_io import (
    dump_weights,
    dumps,
    iter_scene_lines,
    load_weights,
    read_report,
    record_from_scenario,
    rows_to_csv,
    write_scenes,
)
from .sensitivity import AGGREGATIONS, SensitivityConfig
from .sim import PRESETS, ScenarioConfig, generate_scenarios

log = logging.getLogger("pimetric")


def _csv_list(text: str, allowed) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"unknown name(s) {bad or text!r}; choose from {', '.join(allowed)}")
    return items


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _read_records(path):
    """(records, failures) where failures are (line number, exception)."""
    records, failures = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, rec in iter_scene_lines(fh):
            if isinstance(rec, Exception):
                failures.append((lineno, rec))
            else:
                records.append(rec)
    return records, failures


def _report_failures(path, failures) -> None:
    for lineno, exc in failures:
        print(f"{path}:{lineno}: {type(exc).__name__}: {exc}", file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = ScenarioConfig(preset=args.preset, seed=args.seed, horizon=args.horizon,
                         **({"num_agents": args.num_agents} if args.num_agents else {}))
    scenes = generate_scenarios(cfg, args.count)
    write_scenes(args.out, (record_from_scenario(s) for s in scenes))
    print(f"wrote {len(scenes)} scenes to {args.out}", file=sys.stderr)
    return 0


def cmd_learn(args) -> int:
    records, failures = _read_records(args.scenes)
    if failures:
        _report_failures(args.scenes, failures)
        return _fail(f"{len(failures)} invalid scene line(s); refusing to learn from a partial dataset")
    if not records:
        return _fail(f"no scenes in {args.scenes}")
    result = learn_weights([r.to_rollout() for r in records], LearnConfig(max_iterations=args.max_iterations))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_weights(result) + "\n")
    w = result.weights
    print(
        f"learned from {len(records)} rollouts: goal={w.w_goal:.4g} control={w.w_control:.4g} "
        f"rbf_current={w.w_rbf_current:.4g} rbf_pred={w.w_rbf_pred:.4g} "
        f"(converged={result.converged}, iterations={result.iterations})",
        file=sys.stderr,
    )
    if result.flat_directions:
        print(f"warning: no data support for {', '.join(result.flat_directions)}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    with open(args.weights, encoding="utf-8") as fh:
        theta = load_weights(fh.read())
    records, failures = _read_records(args.scenes)
    cfg = SensitivityConfig(aggregation=args.aggregation)
    rows = []
    eval_failures = 0
    for rec, result in zip(records, evaluate_records(records, theta, args.metrics, args.scheme, cfg, args.workers)):
        if isinstance(result, Exception):
            eval_failures += 1
            print(f"{args.scenes}: scene {rec.scene_id}: {type(result).__name__}: {result}", file=sys.stderr)
        else:
            rows.extend(result)
    _report_failures(args.scenes, failures)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rows_to_csv(rows))
    meta = {
        "sensitivity_aggregation": args.aggregation,
        "metrics": args.metrics,
        "schemes": args.scheme,
        "weights": {"goal": theta.w_goal, "control": theta.w_control,
                    "rbf_current": theta.w_rbf_current, "rbf_pred": theta.w_rbf_pred},
    }
    with open(args.out + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(meta) + "\n")
    n_failed = len(failures) + eval_failures
    print(
        f"evaluated {len(records) - eval_failures} scene(s), {n_failed} failed, {len(rows)} row(s) -> {args.out}",
        file=sys.stderr,
    )
    return 1 if n_failed else 0


def cmd_report(args) -> int:
    with open(args.inp, encoding="utf-8") as fh:
        rows = read_report(fh.read())
    desc = ""
    meta_path = args.inp + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        desc = f"sensitivity aggregation: {meta.get('sensitivity_aggregation', 'l2')}"
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(rows, description=desc))
    print(f"rendered {len(rows)} row(s) to {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimetric", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate expert scenes as JSONL")
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--horizon", type=int, default=40, help="rollout steps")
    p.add_argument("--num-agents", type=int, default=None, help="agents per random scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn", help="fit cost weights to scene rollouts")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iterations", type=int, default=500)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", help="plain and planning-informed metrics as CSV")
    p.add_argument("--scenes", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--metrics", type=lambda t: _csv_list(t, METRIC_NAMES), default=["ade", "fde"])
    p.add_argument("--scheme", type=lambda t: _csv_list(t, SCHEME_NAMES), default=["gt_excess"])
    p.add_argument("--aggregation", choices=AGGREGATIONS, default="l2")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render an evaluation CSV as SVG")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, SceneParseError, ValueError, KeyError, ArithmeticError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
