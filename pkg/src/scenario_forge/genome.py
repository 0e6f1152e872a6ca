"""Evolutionary operators over obstacle genomes and NSGA-II selection."""
from __future__ import annotations

import itertools
import math
from dataclasses import replace

import numpy as np

from .lane_map import LaneMap
from .model import (
    GENE_NAMES,
    EvaluatedScenario,
    Mobility,
    ObjectiveVector,
    ObstacleGenome,
    ObstacleKind,
    ScenarioGenome,
)
from .validity import ConstraintTable, default_constraints, lane_heading, repair, resample_gene

__all__ = [
    "EvaluatedScenario", "Mobility", "ObjectiveVector", "ObstacleGenome", "ObstacleKind", "ScenarioGenome",
    "two_point_crossover", "mutate_genes", "mutate_one_gene", "mutate_scenario", "crossover_within",
    "swap_obstacles", "ensure_unique_ids", "non_dominated_sort", "crowding_distance", "nsga2_select",
    "nsga2_select_indices", "scalar_fitness", "dominates",
]

N_GENES = len(GENE_NAMES)
_START, _HEADING = GENE_NAMES.index("start"), GENE_NAMES.index("heading")
CUT_PAIRS = [(i, j) for i in range(N_GENES + 1) for j in range(i, N_GENES + 1)]
MIN_OBSTACLES, MAX_OBSTACLES = 1, 70


def _id_counter(start: int):
    counter = itertools.count(start)
    return lambda: next(counter)


def two_point_crossover(a: ObstacleGenome, b: ObstacleGenome, rng, lane_map: LaneMap,
                        table: ConstraintTable | None = None, cuts=None, fresh_id=None):
    """Swap the genes in ``[i, j)`` between two obstacles and repair both children.

    ``cuts`` overrides the random cut pair. A child whose id gene came from
    the other parent gets a new id from ``fresh_id`` when one is supplied.
    """
    if cuts is None:
        cuts = CUT_PAIRS[int(rng.integers(len(CUT_PAIRS)))]
    i, j = cuts
    if not 0 <= i <= j <= N_GENES:
        raise ValueError(f"bad cut points {cuts}")
    ga, gb = list(a.genes()), list(b.genes())
    ga[i:j], gb[i:j] = gb[i:j], ga[i:j]
    children = []
    for genes in (ga, gb):
        child = ObstacleGenome.from_genes(genes)
        if i <= 0 < j and fresh_id is not None:
            child = replace(child, id=int(fresh_id()))
        if (i <= _START < j) != (i <= _HEADING < j):
            child = replace(child, heading=lane_heading(lane_map, child.start))
        children.append(repair(child, table, lane_map, rng))
    return children[0], children[1]


def mutate_genes(ind: ObstacleGenome, rng, p_gene: float, lane_map: LaneMap,
                 table: ConstraintTable | None = None, fresh_id=None) -> ObstacleGenome:
    """Resample each gene independently with probability ``p_gene``."""
    table = table or default_constraints()
    g = ind
    for gene in GENE_NAMES:
        if rng.random() < p_gene:
            g = resample_gene(g, gene, table, lane_map, rng, fresh_id)
    return repair(g, table, lane_map, rng)


def mutate_one_gene(ind: ObstacleGenome, rng, lane_map: LaneMap,
                    table: ConstraintTable | None = None) -> ObstacleGenome:
    """Resample a single randomly chosen attribute (id excluded)."""
    table = table or default_constraints()
    gene = GENE_NAMES[1 + int(rng.integers(N_GENES - 1))]
    return repair(resample_gene(ind, gene, table, lane_map, rng), table, lane_map, rng)


def ensure_unique_ids(obstacles) -> tuple:
    """Keep the first occurrence of each id; give later duplicates fresh ids."""
    seen = set()
    nxt = _id_counter(max((o.id for o in obstacles), default=0) + 1)
    out = []
    for o in obstacles:
        if o.id in seen:
            o = replace(o, id=nxt())
        seen.add(o.id)
        out.append(o)
    return tuple(out)


def mutate_scenario(s: ScenarioGenome, donor: EvaluatedScenario, rng, p_add: float, p_remove: float,
                    own_distances: dict | None = None,
                    min_obstacles: int = MIN_OBSTACLES, max_obstacles: int = MAX_OBSTACLES) -> ScenarioGenome:
    """Cross-scenario mutation: maybe import the donor's closest obstacle,
    maybe drop this scenario's most distant one.

    ``own_distances`` maps obstacle id to its minimum distance from the ego in
    the last evaluation of ``s``; obstacles without an entry are never
    chosen for removal unless none has one.
    """
    obstacles = list(s.obstacles)
    if rng.random() < p_add and len(obstacles) < max_obstacles and donor.genome.obstacles:
        dist = donor.per_obstacle_min_distance
        best = min(donor.genome.obstacles, key=lambda o: (dist.get(o.id, math.inf), o.id))
        obstacles.append(replace(best, id=s.next_id()))
    if rng.random() < p_remove and len(obstacles) > min_obstacles:
        own = own_distances or {}
        known = [k for k, o in enumerate(obstacles[:len(s.obstacles)]) if o.id in own]
        if known:
            worst = max(known, key=lambda k: (own[obstacles[k].id], -obstacles[k].id))
        else:
            worst = int(rng.integers(len(obstacles)))
        del obstacles[worst]
    return replace(s, obstacles=ensure_unique_ids(obstacles))


def crossover_within(s: ScenarioGenome, rng, p_crossover: float, lane_map: LaneMap,
                     table: ConstraintTable | None = None) -> ScenarioGenome:
    """Shuffle a scenario's obstacles into pairs and cross each pair with probability ``p_crossover``."""
    obstacles = list(s.obstacles)
    order = rng.permutation(len(obstacles))
    fresh = _id_counter(s.next_id())
    for k in range(0, len(order) - 1, 2):
        if rng.random() < p_crossover:
            ia, ib = order[k], order[k + 1]
            obstacles[ia], obstacles[ib] = two_point_crossover(
                obstacles[ia], obstacles[ib], rng, lane_map, table, fresh_id=fresh)
    return replace(s, obstacles=ensure_unique_ids(obstacles))


def swap_obstacles(s1: ScenarioGenome, s2: ScenarioGenome, rng):
    """Whole-obstacle exchange between two scenarios; genes travel unchanged."""
    o1, o2 = list(s1.obstacles), list(s2.obstacles)
    i, j = int(rng.integers(len(o1))), int(rng.integers(len(o2)))
    o1[i], o2[j] = o2[j], o1[i]
    return (replace(s1, obstacles=ensure_unique_ids(o1)),
            replace(s2, obstacles=ensure_unique_ids(o2)))


# --- NSGA-II -----------------------------------------------------------------

def _min_vectors(objs) -> np.ndarray:
    rows = []
    for o in objs:
        if isinstance(o, EvaluatedScenario):
            o = o.objectives
        if isinstance(o, ObjectiveVector):
            if not o.is_finite():
                raise ValueError(f"non-finite objective vector {o}")
            rows.append(o.as_minimization())
        else:
            rows.append(tuple(o))
    arr = np.asarray(rows, dtype=float).reshape(len(rows), -1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite objective vector")
    return arr


def dominates(a, b) -> bool:
    """``a`` dominates ``b`` (both in minimisation form)."""
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(objs) -> list:
    """Fast non-dominated sort; returns fronts as ascending index lists.

    ObjectiveVector inputs are oriented by their declared directions; plain
    tuples are taken as already in minimisation form.
    """
    f = _min_vectors(objs)
    n = len(f)
    if n == 0:
        return []
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(front) -> list:
    f = _min_vectors(front)
    n = len(f)
    if n == 0:
        raise ValueError("empty front")
    dist = np.zeros(n)
    if n <= 2:
        return [math.inf] * n
    for m in range(f.shape[1]):
        order = np.argsort(f[:, m], kind="stable")
        dist[order[0]] = dist[order[-1]] = math.inf
        span = f[order[-1], m] - f[order[0], m]
        if span <= 0:
            continue
        gaps = (f[order[2:], m] - f[order[:-2], m]) / span
        dist[order[1:-1]] += gaps
    return dist.tolist()


def nsga2_select_indices(objs, k: int) -> list:
    n = len(objs)
    if k > n:
        raise ValueError("cannot select more individuals than the population holds")
    chosen = []
    for front in non_dominated_sort(objs):
        if len(chosen) + len(front) <= k:
            chosen.extend(front)
            continue
        cd = crowding_distance([objs[i] for i in front])
        ranked = sorted(range(len(front)), key=lambda q: (-cd[q], front[q]))
        chosen.extend(front[q] for q in ranked[:k - len(chosen)])
        break
    return chosen


def nsga2_select(pop, k: int) -> list:
    """Elitist truncation: whole fronts first, the last one by crowding distance."""
    return [pop[i] for i in nsga2_select_indices(pop, k)]


def scalar_fitness(obj: ObjectiveVector, norm) -> float:
    """Sum of min-max normalised objectives, each oriented so 1 is most violation-prone.

    Reporting only; selection never uses it.
    """
    total = 0.0
    for value, direction, (lo, hi) in zip(obj.as_tuple(), ObjectiveVector.DIRECTIONS, norm):
        if not hi > lo:
            raise ValueError("degenerate normalisation range")
        x = min(max((value - lo) / (hi - lo), 0.0), 1.0)
        total += x if direction > 0 else 1.0 - x
    return total
