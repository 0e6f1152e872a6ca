"""``forge`` command line: run experiments, replay scenarios, dedup and compare runs."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dedup import dedup
from .harness import REPRESENTATIONS, ConfigError, ExperimentConfig, load_config, pairwise_stats, run_experiment
from .model import ScenarioGenome
from .oracles import KINDS, evaluate, read_violations, violations_to_json
from .simulator import simulate

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _cmd_run(args) -> int:
    if args.config:
        cfg, seeds, reps = load_config(args.config)
    else:
        cfg, seeds, reps = ExperimentConfig(), [0], ["full"]
    overrides = {}
    if args.budget is not None:
        overrides.update(generations=args.budget, wall_clock_minutes=None)
    if args.wall_clock is not None:
        overrides["wall_clock_minutes"] = args.wall_clock
    if args.map:
        overrides["map"] = args.map
    if args.out:
        overrides["out"] = args.out
    if args.workers:
        overrides["workers"] = args.workers
    try:
        cfg = replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seeds = args.seed or seeds
    reps = list(REPRESENTATIONS) if args.rep == ["all"] else (args.rep or reps)
    reports = run_experiment(cfg, seeds, reps)
    for r in reports:
        found = ", ".join(f"{k}={r.unique_count[k]}/{r.all_count[k]}" for k in KINDS)
        print(f"{r.representation:8s} seed {r.seed}: {r.evaluations} scenarios; unique/all {found}")
    print(f"wrote {Path(cfg.out) / 'summary.csv'} and {Path(cfg.out) / 'stats.json'}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    cfg = load_config(args.config)[0] if args.config else ExperimentConfig()
    if args.map:
        cfg = replace(cfg, map=args.map)
    lane_map = cfg.load_map()
    try:
        scenario = ScenarioGenome.load(args.scenario)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read scenario {args.scenario}: {exc}") from exc
    ev = evaluate(simulate(scenario, lane_map, cfg.planner), lane_map, cfg.thresholds)
    print(json.dumps(violations_to_json(ev.violations, ev.objectives, scenario_id=scenario.scenario_id),
                     indent=1, sort_keys=True))
    return EXIT_OK


def _cmd_dedup(args) -> int:
    files = sorted(Path(args.violations).rglob("violations.json"))
    if not files:
        raise ConfigError(f"no violations.json under {args.violations}")
    violations = [v for f in files for v in read_violations(f)]
    report = dedup(violations)
    print("kind,all,unique,eliminated_percent")
    for row in report.rows():
        print(f"{row['kind']},{row['all']},{row['unique']},{row['eliminated_percent']:.2f}")
    if args.out:
        report.write_json(args.out)
    return EXIT_OK


def _unique_counts(directory) -> list:
    files = sorted(Path(directory).rglob("run_report.json"))
    if not files:
        raise ConfigError(f"no run_report.json under {directory}")
    return [json.loads(f.read_text())["unique"] for f in files]


def _cmd_stats(args) -> int:
    a, b = _unique_counts(args.a), _unique_counts(args.b)
    samples = {str(args.a): {k: [r.get(k, 0) for r in a] for k in KINDS},
               str(args.b): {k: [r.get(k, 0) for r in b] for k in KINDS}}
    result = {k: rows[0] for k, rows in pairwise_stats(samples).items()}
    print(json.dumps(result, indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forge", description="Search-based driving scenario generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", type=Path)
    run.add_argument("--seed", type=int, action="append", help="repeatable; overrides the config seed list")
    budget = run.add_mutually_exclusive_group()
    budget.add_argument("--budget", type=int, metavar="GENS", help="generations after the initial population")
    budget.add_argument("--wall-clock", type=float, metavar="MIN")
    run.add_argument("--rep", action="append", choices=[*REPRESENTATIONS, "all"])
    run.add_argument("--map")
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.set_defaults(func=_cmd_run)

    rp = sub.add_parser("replay", help="re-simulate and re-grade a scenario file")
    rp.add_argument("--scenario", type=Path, required=True)
    rp.add_argument("--map")
    rp.add_argument("--config", type=Path)
    rp.set_defaults(func=_cmd_replay)

    dd = sub.add_parser("dedup", help="deduplicate every violations.json under a directory")
    dd.add_argument("--violations", type=Path, required=True)
    dd.add_argument("--out", type=Path)
    dd.set_defaults(func=_cmd_dedup)

    st = sub.add_parser("stats", help="compare per-run unique counts of two output directories")
    st.add_argument("--a", type=Path, required=True)
    st.add_argument("--b", type=Path, required=True)
    st.set_defaults(func=_cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any failure as a runtime error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
