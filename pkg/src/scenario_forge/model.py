"""Plain data types shared by the generator, simulator and oracles."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .lane_map import MapPoint


class ObstacleKind(str, enum.Enum):
    VEHICLE = "VEHICLE"
    PEDESTRIAN = "PEDESTRIAN"
    BICYCLE = "BICYCLE"


class Mobility(str, enum.Enum):
    STATIC = "STATIC"
    DYNAMIC = "DYNAMIC"


GENE_NAMES = ("id", "start", "end", "heading", "length", "width", "height", "speed", "kind", "mobility")


@dataclass(frozen=True)
class ObstacleGenome:
    """One obstacle, encoded as a fixed 10-gene vector (see ``GENE_NAMES``)."""

    id: int
    start: MapPoint
    end: MapPoint
    heading: float
    length: float
    width: float
    height: float
    speed: float
    kind: ObstacleKind
    mobility: Mobility

    def __post_init__(self):
        object.__setattr__(self, "start", MapPoint(float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", MapPoint(float(self.end[0]), float(self.end[1])))
        object.__setattr__(self, "kind", ObstacleKind(self.kind))
        object.__setattr__(self, "mobility", Mobility(self.mobility))

    @property
    def is_static(self) -> bool:
        return self.mobility is Mobility.STATIC

    def genes(self) -> tuple:
        return tuple(getattr(self, name) for name in GENE_NAMES)

    @classmethod
    def from_genes(cls, genes) -> "ObstacleGenome":
        genes = tuple(genes)
        if len(genes) != len(GENE_NAMES):
            raise ValueError(f"expected {len(GENE_NAMES)} genes, got {len(genes)}")
        return cls(*genes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "start": [self.start.x, self.start.y],
            "end": [self.end.x, self.end.y],
            "heading": self.heading,
            "length": self.length,
            "width": self.width,
            "height": self.height,
            "speed": self.speed,
            "kind": self.kind.value,
            "mobility": self.mobility.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObstacleGenome":
        return cls(**{name: d[name] for name in GENE_NAMES})


@dataclass(frozen=True)
class ScenarioGenome:
    ego_start: MapPoint
    ego_end: MapPoint
    obstacles: tuple
    duration: float = 30.0
    scenario_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ego_start", MapPoint(float(self.ego_start[0]), float(self.ego_start[1])))
        object.__setattr__(self, "ego_end", MapPoint(float(self.ego_end[0]), float(self.ego_end[1])))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def obstacle_ids(self) -> list:
        return [o.id for o in self.obstacles]

    def next_id(self) -> int:
        return max(self.obstacle_ids(), default=0) + 1

    def to_dict(self) -> dict:
        return {
            "format": "scenario",
            "version": 1,
            "scenario_id": self.scenario_id,
            "duration": self.duration,
            "ego": {"start": [self.ego_start.x, self.ego_start.y], "end": [self.ego_end.x, self.ego_end.y]},
            "obstacles": [o.to_dict() for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioGenome":
        if d.get("format", "scenario") != "scenario" or d.get("version", 1) != 1:
            raise ValueError("unsupported scenario file")
        return cls(
            ego_start=tuple(d["ego"]["start"]),
            ego_end=tuple(d["ego"]["end"]),
            obstacles=[ObstacleGenome.from_dict(o) for o in d["obstacles"]],
            duration=float(d.get("duration", 30.0)),
            scenario_id=d.get("scenario_id", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ScenarioGenome":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ObjectiveVector:
    """The five fitness values; ``DIRECTIONS`` gives +1 to maximise, -1 to minimise."""

    f_collision: float
    f_speed: float
    f_unsafe_change: float
    f_fast_accl: float
    f_hard_brake: float

    DIRECTIONS = (-1, -1, +1, +1, -1)

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    def as_minimization(self) -> tuple:
        return tuple(-d * v for d, v in zip(self.DIRECTIONS, self.as_tuple()))

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EvaluatedScenario:
    genome: ScenarioGenome
    objectives: ObjectiveVector
    per_obstacle_min_distance: dict
    violations: list = field(default_factory=list)
