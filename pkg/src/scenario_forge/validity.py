"""Obstacle constraints: validation, repair and valid random sampling."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .lane_map import LaneMap, OffMapError
from .model import Mobility, ObstacleGenome, ObstacleKind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KMH = 3.6
ROUTE_RETRIES = 100
MAX_ATTEMPTS = 1000
SIZE_GENES = ("length", "width", "height")
KINDS = (ObstacleKind.VEHICLE, ObstacleKind.PEDESTRIAN, ObstacleKind.BICYCLE)


class RepairExhausted(RuntimeError):
    """No valid obstacle could be produced; the map is probably degenerate."""


@dataclass(frozen=True)
class TypeBounds:
    width: tuple
    length: tuple
    height: tuple
    speed: tuple  # m/s

    def __post_init__(self):
        for name in ("width", "length", "height", "speed"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} bounds must satisfy 0 < min <= max, got {lo}, {hi}")


@dataclass(frozen=True)
class ConstraintTable:
    bounds: dict
    static_probability: float = 0.1
    heading_range: tuple = (-math.pi, math.pi)

    def __getitem__(self, kind) -> TypeBounds:
        return self.bounds[ObstacleKind(kind)]


def load_constraints(path=None) -> ConstraintTable:
    """Read a constraint table; ``None`` loads the embedded defaults."""
    if path is None:
        text = (resources.files("scenario_forge") / "data" / "constraints.toml").read_text()
    else:
        text = Path(path).read_text()
    raw = tomllib.loads(text)
    bounds = {}
    for kind in KINDS:
        sec = raw[kind.value]
        lo, hi = sec["speed_kmh"]
        bounds[kind] = TypeBounds(
            width=tuple(sec["width"]),
            length=tuple(sec["length"]),
            height=tuple(sec["height"]),
            speed=(lo / KMH, hi / KMH),
        )
    return ConstraintTable(bounds, float(raw.get("static_probability", 0.1)))


_DEFAULT = None


def default_constraints() -> ConstraintTable:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_constraints()
    return _DEFAULT


@dataclass(frozen=True)
class Breach:
    gene: str
    message: str

    def __str__(self):
        return self.message


def _on_map(lane_map, p):
    try:
        lane_map.project(p)
        return True
    except OffMapError:
        return False


def has_route(lane_map: LaneMap, start, end) -> bool:
    try:
        return lane_map.shortest_route(start, end) is not None
    except OffMapError:
        return False


def validate(genome: ObstacleGenome, lane_map: LaneMap, table: ConstraintTable | None = None) -> list:
    """Return the list of constraint breaches (empty when the genome is valid)."""
    table = table or default_constraints()
    out = []
    b = table[genome.kind]
    for gene in (*SIZE_GENES, "speed"):
        value = getattr(genome, gene)
        lo, hi = getattr(b, gene)
        if not math.isfinite(value):
            out.append(Breach(gene, f"{gene} is not finite"))
        elif value < lo - 1e-12:
            out.append(Breach(gene, f"{gene} below kind min"))
        elif value > hi + 1e-12:
            out.append(Breach(gene, f"{gene} exceeds kind max"))
    if not (math.isfinite(genome.heading) and -math.pi < genome.heading <= math.pi):
        out.append(Breach("heading", "heading outside (-pi, pi]"))
    start_ok = _on_map(lane_map, genome.start)
    end_ok = _on_map(lane_map, genome.end)
    if not start_ok:
        out.append(Breach("start", "start off map"))
    if not end_ok:
        out.append(Breach("end", "end off map"))
    if start_ok and end_ok and not genome.is_static and not has_route(lane_map, genome.start, genome.end):
        out.append(Breach("route", "no valid path"))
    return out


def lane_heading(lane_map: LaneMap, point, hint=None) -> float:
    proj = lane_map.project(point, hint)
    return lane_map.heading_at(proj.lane_id, proj.s)


def sample_start(lane_map, rng):
    """Random centerline point plus the lane tangent there."""
    p, lane_id, s = lane_map.sample_point(rng)
    return p, lane_map.heading_at(lane_id, s)


def resample_gene(genome: ObstacleGenome, gene: str, table: ConstraintTable, lane_map: LaneMap, rng,
                  fresh_id=None) -> ObstacleGenome:
    """Draw a new value for one gene from its valid range.

    Heading is tied to the lane tangent at the start point, so resampling
    ``start`` also updates ``heading`` and resampling ``heading`` re-derives it.
    """
    b = table[genome.kind]
    if gene in SIZE_GENES or gene == "speed":
        lo, hi = getattr(b, gene)
        return replace(genome, **{gene: float(rng.uniform(lo, hi))})
    if gene == "start":
        p, h = sample_start(lane_map, rng)
        return replace(genome, start=p, heading=h)
    if gene == "end":
        p, _, _ = lane_map.sample_point(rng)
        return replace(genome, end=p)
    if gene == "heading":
        return replace(genome, heading=lane_heading(lane_map, genome.start))
    if gene == "kind":
        return replace(genome, kind=KINDS[int(rng.integers(len(KINDS)))])
    if gene == "mobility":
        static = rng.random() < table.static_probability
        return replace(genome, mobility=Mobility.STATIC if static else Mobility.DYNAMIC)
    if gene == "id":
        return genome if fresh_id is None else replace(genome, id=int(fresh_id()))
    raise KeyError(gene)


def repair(genome: ObstacleGenome, table: ConstraintTable | None, lane_map: LaneMap, rng) -> ObstacleGenome:
    """Resample only the breached genes until the genome validates."""
    table = table or default_constraints()
    breaches = validate(genome, lane_map, table)
    if not breaches:
        return genome
    g = genome
    # heading follows the start lane, so it waits until the start is on the map
    fixable = (*SIZE_GENES, "speed") if any(b.gene == "start" for b in breaches) else (*SIZE_GENES, "speed", "heading")
    for br in breaches:
        if br.gene in fixable:
            g = resample_gene(g, br.gene, table, lane_map, rng)
    attempts = 0
    while True:
        breaches = validate(g, lane_map, table)
        if not breaches:
            return g
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise RepairExhausted(f"obstacle {genome.id}: no valid configuration after {MAX_ATTEMPTS} attempts")
        genes = {br.gene for br in breaches}
        if "start" in genes:
            g = resample_gene(g, "start", table, lane_map, rng)
        if "end" in genes:
            g = resample_gene(g, "end", table, lane_map, rng)
        if "route" in genes:
            if attempts <= ROUTE_RETRIES:
                g = resample_gene(g, "end", table, lane_map, rng)
            else:
                g = resample_gene(g, "start", table, lane_map, rng)
                g = resample_gene(g, "end", table, lane_map, rng)
        for gene in genes & {*SIZE_GENES, "speed", "heading"}:
            g = resample_gene(g, gene, table, lane_map, rng)


def sample_obstacle(table: ConstraintTable | None, lane_map: LaneMap, rng, obstacle_id: int) -> ObstacleGenome:
    """A random obstacle that passes :func:`validate`."""
    table = table or default_constraints()
    kind = KINDS[int(rng.integers(len(KINDS)))]
    b = table[kind]
    dims = {gene: float(rng.uniform(*getattr(b, gene))) for gene in SIZE_GENES}
    speed = float(rng.uniform(*b.speed))
    static = rng.random() < table.static_probability
    start, heading = sample_start(lane_map, rng)
    for attempt in range(MAX_ATTEMPTS):
        if attempt and attempt % ROUTE_RETRIES == 0:
            start, heading = sample_start(lane_map, rng)
        end = start if static else lane_map.sample_point(rng)[0]
        g = ObstacleGenome(
            id=int(obstacle_id), start=start, end=end, heading=heading, speed=speed, kind=kind,
            mobility=Mobility.STATIC if static else Mobility.DYNAMIC, **dims,
        )
        if not validate(g, lane_map, table):
            return g
    raise RepairExhausted("could not sample a routable obstacle")
