"""Experiment loop for the three scenario representations and the comparison report.

``full`` evolves individual obstacle genes, ``partial`` only moves whole
obstacles between scenarios, ``random`` draws a fresh valid batch every
generation. All three spend the same number of scenario evaluations.
"""
from __future__ import annotations

import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from . import genome as ops
from .dedup import dedup
from .lane_map import LaneMap, MapError, load_bundled_map, load_map
from .model import EvaluatedScenario, ObjectiveVector, ScenarioGenome
from .oracles import KINDS, Thresholds, evaluate, write_violations
from .simulator import PlannerConfig, simulate, write_record
from .stats import mann_whitney_u, vargha_delaney_a12
from .validity import ConstraintTable, default_constraints, sample_obstacle

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

REPRESENTATIONS = ("full", "partial", "random")
INSUFFICIENT = "insufficient samples"
SCOPE_NOTE = ("Desk-scale comparison under the built-in planner and a reduced budget. Counts are not comparable "
              "to Apollo 6.0 results from 12-hour runs; only the methodology (equal budget, Mann-Whitney U, "
              "Vargha-Delaney A12) carries over, and no direction of difference is asserted.")


class ConfigError(ValueError):
    """Bad experiment configuration (exit code 2 on the command line)."""


@dataclass(frozen=True)
class ExperimentConfig:
    representation: str = "full"
    map: str = "grid_3x3"
    population_size: int = 50
    obstacles: tuple = (1, 70)
    initial_obstacles: tuple | None = None  # defaults to ``obstacles``
    duration: float = 30.0
    generations: int = 10
    wall_clock_minutes: float | None = None
    p_crossover: float = 0.8
    p_gene_mutation: float = 0.2  # per obstacle
    gene_indpb: float = 0.2  # per gene, once an obstacle is picked for mutation
    p_add: float = 0.1
    p_remove: float = 0.1
    seed: int = 0
    ego_route_length: tuple = (50.0, 250.0)
    thresholds: Thresholds = field(default_factory=Thresholds)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {REPRESENTATIONS}, got {self.representation!r}")
        for name in ("p_crossover", "p_gene_mutation", "gene_indpb", "p_add", "p_remove"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.population_size < 1:
            raise ConfigError("population_size must be positive")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.wall_clock_minutes is not None and not self.wall_clock_minutes > 0:
            raise ConfigError("wall_clock_minutes must be positive")
        lo, hi = self.obstacles
        if not 1 <= lo <= hi:
            raise ConfigError("obstacle range must satisfy 1 <= min <= max")
        ilo, ihi = self.initial_obstacles or self.obstacles
        if not lo <= ilo <= ihi <= hi:
            raise ConfigError("initial_obstacles must lie inside the obstacle range")
        if not 0 < self.ego_route_length[0] <= self.ego_route_length[1]:
            raise ConfigError("ego_route_length must satisfy 0 < min <= max")
        if self.duration <= 0 or self.workers < 1:
            raise ConfigError("duration and workers must be positive")

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.representation / f"seed_{self.seed}"

    def load_map(self) -> LaneMap:
        try:
            if Path(self.map).suffix == ".json" or Path(self.map).exists():
                return load_map(self.map)
            return load_bundled_map(self.map)
        except (OSError, MapError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load map {self.map!r}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obstacles"] = list(self.obstacles)
        d["initial_obstacles"] = list(self.initial_obstacles) if self.initial_obstacles else None
        d["ego_route_length"] = list(self.ego_route_length)
        return d


_EXPERIMENT_KEYS = {f.name for f in fields(ExperimentConfig)} - {"thresholds", "planner"}
_OPERATOR_KEYS = {"p_crossover", "p_gene_mutation", "gene_indpb", "p_add", "p_remove"}


def config_from_dict(raw: dict, base_dir: Path | None = None) -> tuple:
    """Build ``(config, seeds, representations)`` from a parsed TOML document."""
    exp = dict(raw.get("experiment", {}))
    seeds = exp.pop("seeds", None)
    reps = exp.pop("representations", None)
    ops_ = dict(raw.get("operators", {}))
    unknown = (set(exp) - _EXPERIMENT_KEYS) | (set(ops_) - _OPERATOR_KEYS)
    extra_sections = set(raw) - {"experiment", "operators", "thresholds", "planner"}
    if unknown or extra_sections:
        raise ConfigError(f"unknown config keys: {sorted(unknown | extra_sections)}")
    kwargs = {**exp, **ops_}
    for key in ("obstacles", "initial_obstacles", "ego_route_length"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if base_dir is not None and "map" in kwargs and Path(kwargs["map"]).suffix == ".json":
        path = Path(kwargs["map"])
        kwargs["map"] = str(path if path.is_absolute() else base_dir / path)
    try:
        kwargs["thresholds"] = Thresholds.from_dict(raw.get("thresholds", {}))
        kwargs["planner"] = PlannerConfig(**raw.get("planner", {}))
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seeds = [cfg.seed] if seeds is None else [int(s) for s in seeds]
    reps = [cfg.representation] if reps is None else list(reps)
    for rep in reps:
        if rep not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {rep!r}")
    return cfg, seeds, reps


def load_config(path) -> tuple:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw, path.parent)


# --- scenario construction -------------------------------------------------------

def sample_ego_route(lane_map: LaneMap, rng, length_range, max_attempts: int = 1000) -> tuple:
    lo, hi = length_range
    for _ in range(max_attempts):
        a = lane_map.sample_point(rng)[0]
        b = lane_map.sample_point(rng)[0]
        route = lane_map.shortest_route(a, b)
        if route is not None and lo <= route.total_length <= hi:
            return a, b
    raise ConfigError(f"no ego route with length in [{lo}, {hi}] m found on map {lane_map.map_id}")


def random_scenario(cfg: ExperimentConfig, lane_map: LaneMap, rng, scenario_id: str,
                    table: ConstraintTable | None = None) -> ScenarioGenome:
    lo, hi = cfg.initial_obstacles or cfg.obstacles
    start, end = sample_ego_route(lane_map, rng, cfg.ego_route_length)
    count = int(rng.integers(lo, hi + 1))
    obstacles = [sample_obstacle(table, lane_map, rng, k + 1) for k in range(count)]
    return ScenarioGenome(start, end, obstacles, cfg.duration, scenario_id)


def _fresh_ids(s: ScenarioGenome):
    counter = iter(range(s.next_id(), 10 ** 9))
    return lambda: next(counter)


def breed_full(parents, cfg, lane_map, rng, table=None) -> list:
    """Offspring for the fully mutable representation, one per parent."""
    children = []
    n = len(parents)
    for i, parent in enumerate(parents):
        donor = parents[(i + 1 + int(rng.integers(n - 1))) % n] if n > 1 else parent
        s = ops.mutate_scenario(parent.genome, donor, rng, cfg.p_add, cfg.p_remove,
                                own_distances=parent.per_obstacle_min_distance,
                                min_obstacles=cfg.obstacles[0], max_obstacles=cfg.obstacles[1])
        s = ops.crossover_within(s, rng, cfg.p_crossover, lane_map, table)
        fresh = _fresh_ids(s)
        obstacles = [ops.mutate_genes(o, rng, cfg.gene_indpb, lane_map, table, fresh)
                     if rng.random() < cfg.p_gene_mutation else o for o in s.obstacles]
        children.append(replace(s, obstacles=ops.ensure_unique_ids(obstacles)))
    return children


def breed_partial(parents, cfg, lane_map, rng, table=None) -> list:
    """Offspring for the partially mutable baseline: whole-obstacle swaps between scenarios."""
    n = len(parents)
    genomes = []
    for i, parent in enumerate(parents):
        donor = parents[(i + 1 + int(rng.integers(n - 1))) % n] if n > 1 else parent
        genomes.append(ops.mutate_scenario(parent.genome, donor, rng, cfg.p_add, cfg.p_remove,
                                           own_distances=parent.per_obstacle_min_distance,
                                           min_obstacles=cfg.obstacles[0], max_obstacles=cfg.obstacles[1]))
    order = rng.permutation(n)
    for k in range(0, n - 1, 2):
        if rng.random() < cfg.p_crossover:
            a, b = order[k], order[k + 1]
            genomes[a], genomes[b] = ops.swap_obstacles(genomes[a], genomes[b], rng)
    children = []
    for s in genomes:
        obstacles = [ops.mutate_one_gene(o, rng, lane_map, table) if rng.random() < cfg.p_gene_mutation else o
                     for o in s.obstacles]
        children.append(replace(s, obstacles=tuple(obstacles)))
    return children


# --- evaluation ------------------------------------------------------------------------

def _evaluate_one(args):
    s, lane_map, planner, thresholds = args
    t0 = time.perf_counter()
    trace = simulate(s, lane_map, planner)
    t1 = time.perf_counter()
    ev = evaluate(trace, lane_map, thresholds)
    t2 = time.perf_counter()
    return ev, trace, t1 - t0, t2 - t1


@dataclass
class RunReport:
    representation: str
    seed: int
    map_id: str
    generations: list = field(default_factory=list)
    dedup_rows: list = field(default_factory=list)
    all_count: dict = field(default_factory=dict)
    unique_count: dict = field(default_factory=dict)
    evaluations: int = 0
    timings: dict = field(default_factory=lambda: {"generation": 0.0, "simulation": 0.0, "oracles": 0.0})
    violations: list = field(default_factory=list)
    unique_indices: list = field(default_factory=list)
    cluster_of: list = field(default_factory=list)

    def eliminated_percent(self, kind: str) -> float:
        total = self.all_count.get(kind, 0)
        return 0.0 if total == 0 else 100.0 * (1.0 - self.unique_count.get(kind, 0) / total)

    def kinds_found(self) -> set:
        return {k for k, c in self.all_count.items() if c > 0}

    def to_dict(self) -> dict:
        return {
            "representation": self.representation, "seed": self.seed, "map_id": self.map_id,
            "evaluations": self.evaluations, "generations": self.generations,
            "all": self.all_count, "unique": self.unique_count, "dedup": self.dedup_rows,
            "timings_seconds": {k: round(v, 3) for k, v in self.timings.items()},
        }


def _best(objs) -> dict:
    if not objs:
        return {}
    arr = np.array([o.as_tuple() for o in objs])
    best = [arr[:, m].max() if d > 0 else arr[:, m].min() for m, d in enumerate(ObjectiveVector.DIRECTIONS)]
    return dict(zip(ObjectiveVector.__dataclass_fields__, (float(b) for b in best)))


class _Runner:
    def __init__(self, cfg: ExperimentConfig, lane_map: LaneMap | None = None, executor=None):
        self.cfg = cfg
        self.map = lane_map or cfg.load_map()
        self.table = default_constraints()
        self.rng = np.random.default_rng(cfg.seed)
        self.executor = executor
        self.report = RunReport(cfg.representation, cfg.seed, self.map.map_id)
        self.cumulative = {k: 0 for k in KINDS}
        self.dir = cfg.run_dir
        (self.dir / "records").mkdir(parents=True, exist_ok=True)
        (self.dir / "scenarios").mkdir(parents=True, exist_ok=True)

    def evaluate(self, genomes, gen: int) -> list:
        cfg = self.cfg
        jobs = [(s, self.map, cfg.planner, cfg.thresholds) for s in genomes]
        results = list(self.executor.map(_evaluate_one, jobs)) if self.executor else [_evaluate_one(j) for j in jobs]
        evaluated, counts = [], {k: 0 for k in KINDS}
        for s, (ev, trace, t_sim, t_orc) in zip(genomes, results):
            self.report.timings["simulation"] += t_sim
            self.report.timings["oracles"] += t_orc
            evaluated.append(ev.attach(s))
            if ev.violations:
                write_record(trace, self.dir / "records" / f"{s.scenario_id}.jsonl")
                s.save(self.dir / "scenarios" / f"{s.scenario_id}.json")
            for v in ev.violations:
                counts[v.kind] += 1
                self.report.violations.append(v)
        for k in KINDS:
            self.cumulative[k] += counts[k]
        self.report.evaluations += len(genomes)
        self.report.generations.append({
            "generation": gen, "evaluated": len(genomes), "violations": counts,
            "cumulative": dict(self.cumulative), "best_objectives": _best([e.objectives for e in evaluated]),
        })
        log.info("%s seed %d gen %d: %s", self.cfg.representation, self.cfg.seed, gen, counts)
        return evaluated

    def new_batch(self, gen: int) -> list:
        return [random_scenario(self.cfg, self.map, self.rng, f"g{gen:03d}-{k:03d}", self.table)
                for k in range(self.cfg.population_size)]

    def breed(self, survivors, gen: int) -> list:
        t0 = time.perf_counter()
        if self.cfg.representation == "random":
            children = self.new_batch(gen)
        else:
            breed = breed_full if self.cfg.representation == "full" else breed_partial
            children = breed(survivors, self.cfg, self.map, self.rng, self.table)
            children = [replace(c, scenario_id=f"g{gen:03d}-{k:03d}") for k, c in enumerate(children)]
        self.report.timings["generation"] += time.perf_counter() - t0
        return children

    def run(self) -> RunReport:
        cfg = self.cfg
        start = time.monotonic()
        t0 = time.perf_counter()
        population = self.new_batch(0)
        self.report.timings["generation"] += time.perf_counter() - t0
        survivors = self.evaluate(population, 0)
        gen = 0
        while True:
            if cfg.wall_clock_minutes is not None:
                if time.monotonic() - start >= 60.0 * cfg.wall_clock_minutes:
                    break
            elif gen >= cfg.generations:
                break
            gen += 1
            offspring = self.evaluate(self.breed(survivors, gen), gen)
            if cfg.representation != "random":
                survivors = ops.nsga2_select(survivors + offspring, cfg.population_size)
        self.finish()
        return self.report

    def finish(self):
        rep = self.report
        dd = dedup(rep.violations)
        rep.dedup_rows = dd.rows()
        rep.all_count = {k: dd.all_count.get(k, 0) for k in KINDS}
        rep.unique_count = {k: dd.unique_count.get(k, 0) for k in KINDS}
        rep.unique_indices = dd.unique_indices
        rep.cluster_of = dd.cluster_of
        unique = set(dd.unique_indices)
        doc_violations = []
        for i, v in enumerate(rep.violations):
            d = v.to_dict()
            d.update(violation_id=i, cluster=dd.cluster_of[i], unique=i in unique,
                     record=f"records/{v.scenario_id}.jsonl", scenario=f"scenarios/{v.scenario_id}.json")
            doc_violations.append(d)
        doc = {"format": "violations", "version": 1, "representation": rep.representation, "seed": rep.seed,
               "map_id": rep.map_id, "violations": doc_violations}
        (self.dir / "violations.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        (self.dir / "run_report.json").write_text(json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n")
        (self.dir / "config.json").write_text(json.dumps(self.cfg.to_dict(), indent=1, sort_keys=True) + "\n")


def _run(cfg: ExperimentConfig, expected: str, lane_map=None) -> RunReport:
    if cfg.representation != expected:
        raise ConfigError(f"expected representation {expected!r}, got {cfg.representation!r}")
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return _Runner(cfg, lane_map, pool).run()
    return _Runner(cfg, lane_map).run()


def run_full(cfg: ExperimentConfig, lane_map: LaneMap | None = None) -> RunReport:
    return _run(cfg, "full", lane_map)


def run_partial(cfg: ExperimentConfig, lane_map: LaneMap | None = None) -> RunReport:
    return _run(cfg, "partial", lane_map)


def run_random(cfg: ExperimentConfig, lane_map: LaneMap | None = None) -> RunReport:
    return _run(cfg, "random", lane_map)


RUNNERS = {"full": run_full, "partial": run_partial, "random": run_random}


# --- comparison report --------------------------------------------------------------------

def pairwise_stats(samples: dict) -> dict:
    """``samples[rep][kind]`` -> list of per-seed unique counts. Returns per-kind pairwise p and A12."""
    out = {}
    reps = list(samples)
    for kind in KINDS:
        rows = []
        for a, b in combinations(reps, 2):
            xs, ys = samples[a].get(kind, []), samples[b].get(kind, [])
            row = {"a": a, "b": b, "n_a": len(xs), "n_b": len(ys)}
            if len(xs) < 2 or len(ys) < 2:
                row["status"] = INSUFFICIENT
            else:
                row.update(p_value=mann_whitney_u(xs, ys), a12=vargha_delaney_a12(xs, ys))
            rows.append(row)
        out[kind] = rows
    return out


SUMMARY_COLUMNS = ("kind", "representation", "runs", "all", "unique", "eliminated_percent")


def emit_report(reports, outdir) -> dict:
    """Write ``summary.csv`` and ``stats.json`` for a set of runs."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one run report")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    by_rep = {}
    for r in sorted(reports, key=lambda r: (REPRESENTATIONS.index(r.representation), r.seed)):
        by_rep.setdefault(r.representation, []).append(r)
    rows = []
    for kind in KINDS:
        for rep, runs in by_rep.items():
            total = sum(r.all_count.get(kind, 0) for r in runs)
            uniq = sum(r.unique_count.get(kind, 0) for r in runs)
            rows.append({"kind": kind, "representation": rep, "runs": len(runs), "all": total, "unique": uniq,
                         "eliminated_percent": f"{0.0 if total == 0 else 100.0 * (1 - uniq / total):.2f}"})
    with open(outdir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    samples = {rep: {k: [r.unique_count.get(k, 0) for r in runs] for k in KINDS} for rep, runs in by_rep.items()}
    stats = {"metric": "unique violations per run", "scope": SCOPE_NOTE, "pairwise": pairwise_stats(samples)}
    if all(row.get("status") == INSUFFICIENT for rows_ in stats["pairwise"].values() for row in rows_):
        stats["status"] = INSUFFICIENT
    (outdir / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    return stats


def run_experiment(cfg: ExperimentConfig, seeds, representations, lane_map: LaneMap | None = None) -> list:
    lane_map = lane_map or cfg.load_map()
    reports = []
    for rep in representations:
        for seed in seeds:
            reports.append(RUNNERS[rep](replace(cfg, representation=rep, seed=int(seed)), lane_map))
    emit_report(reports, cfg.out)
    return reports


__all__ = [
    "ExperimentConfig", "ConfigError", "RunReport", "load_config", "config_from_dict", "run_full",
    "run_partial", "run_random", "run_experiment", "emit_report", "pairwise_stats", "random_scenario",
    "breed_full", "breed_partial", "sample_ego_route", "EvaluatedScenario", "INSUFFICIENT", "SCOPE_NOTE",
]
