"""The five violation oracles and the matching fitness values, computed from a trace."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geometry import _point_segment_dist, clip_convex, rect_corners, rect_distance
from .lane_map import LaneMap, MapPoint
from .model import EvaluatedScenario, ObjectiveVector, ScenarioGenome
from .simulator import Trace

KINDS = ("collision", "speed", "unsafeChange", "fastAccl", "hardBrake")
SIDES = ("front", "rear", "left", "right")
SLACK = 1e-9
# f_collision for a scenario without obstacles; keeps objective vectors finite
NO_OBSTACLE_DISTANCE = 1.0e6


@dataclass(frozen=True)
class Thresholds:
    beta_safe: float = 8.0 / 3.6  # m/s over the limit
    delta_safe: float = 5.0  # s straddling a lane boundary
    gamma_comfort: float = 4.0  # m/s^2
    epsilon_comfort: float = -4.0  # m/s^2
    collision_distance: float = 0.0  # m
    merge_gap: float = 0.5  # s; closer crossings are one event

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown threshold(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class PolygonPose:
    center: MapPoint
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("polygon extents must be positive")
        object.__setattr__(self, "center", MapPoint(float(self.center[0]), float(self.center[1])))

    def as_tuple(self) -> tuple:
        return (self.center.x, self.center.y, self.heading, self.length, self.width)

    def corners(self) -> np.ndarray:
        return rect_corners(*self.as_tuple())


def polygon_distance(a: PolygonPose, b: PolygonPose) -> float:
    """Minimum distance between two oriented rectangles; 0 when they touch or overlap."""
    return float(rect_distance(a.as_tuple(), b.as_tuple()))


@dataclass(frozen=True)
class Violation:
    kind: str
    t_first: float
    duration: float
    value: float
    ego_position: MapPoint
    ego_speed: float
    ego_heading: float
    collision_side: str | None = None
    obstacle_id: int | None = None
    obstacle_kind: str | None = None
    obstacle_size: tuple | None = None  # length, width, height
    obstacle_speed: float | None = None
    obstacle_heading: float | None = None
    scenario_id: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")
        object.__setattr__(self, "ego_position", MapPoint(float(self.ego_position[0]), float(self.ego_position[1])))
        if self.obstacle_size is not None:
            object.__setattr__(self, "obstacle_size", tuple(float(v) for v in self.obstacle_size))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ego_position"] = list(self.ego_position)
        if self.obstacle_size is not None:
            d["obstacle_size"] = list(self.obstacle_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        known = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        if d.get("obstacle_size") is not None:
            d["obstacle_size"] = tuple(d["obstacle_size"])
        d["ego_position"] = tuple(d["ego_position"])
        return cls(**d)


class Evaluation(NamedTuple):
    violations: list
    objectives: ObjectiveVector
    per_obstacle_min_distance: dict

    def attach(self, genome: ScenarioGenome) -> EvaluatedScenario:
        return EvaluatedScenario(genome, self.objectives, dict(self.per_obstacle_min_distance),
                                 list(self.violations))


# --- event segmentation ----------------------------------------------------------

def runs(mask) -> list:
    """Maximal runs of True as inclusive ``(start, end)`` index pairs."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def events(mask, dt: float, merge_gap: float) -> list:
    """Runs of True, merging runs whose gap of False ticks lasts less than ``merge_gap``."""
    merged = []
    for s, e in runs(mask):
        if merged and (s - merged[-1][1] - 1) * dt < merge_gap - SLACK:
            merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))
    return merged


def _span(s, e, dt) -> float:
    return round((e - s + 1) * dt, 9)


def _ego_fields(trace: Trace, j: int) -> dict:
    return dict(t_first=float(trace.t[j]), ego_position=(float(trace.x[j]), float(trace.y[j])),
                ego_speed=float(trace.speed[j]), ego_heading=float(trace.heading[j]),
                scenario_id=trace.scenario_id)


# --- oracles ------------------------------------------------------------------------

def collision_side(ego_pose: tuple, contact) -> str:
    """Side of the ego hit at ``contact``, from its bearing in the ego frame."""
    x, y, h = ego_pose[:3]
    dx, dy = contact[0] - x, contact[1] - y
    angle = math.degrees(math.atan2(-math.sin(h) * dx + math.cos(h) * dy, math.cos(h) * dx + math.sin(h) * dy))
    if abs(angle) <= 45.0:
        return "front"
    if abs(angle) >= 135.0:
        return "rear"
    return "left" if angle > 0 else "right"


def contact_point(ego_pose: tuple, obs_pose: tuple) -> np.ndarray:
    """Centroid of the overlap region, or the obstacle corner/edge point nearest the ego."""
    a, b = rect_corners(*ego_pose), rect_corners(*obs_pose)
    overlap = clip_convex(b, a)
    if len(overlap):
        return overlap.mean(axis=0)
    # touching only: take the obstacle vertex closest to the ego outline
    d = _point_segment_dist(b[:, None, :], a[None, :, :], np.roll(a, -1, axis=0)[None, :, :]).min(axis=1)
    return b[int(np.argmin(d))]


def check_collision(trace: Trace, th: Thresholds | None = None):
    """Collision events per obstacle and each obstacle's minimum distance to the ego."""
    th = th or Thresholds()
    out, dmin = [], {}
    ego = trace.ego_pose()
    for oid, o in trace.obstacles.items():
        dist = rect_distance(ego, (o.x, o.y, o.heading, o.length, o.width))
        dmin[oid] = float(dist.min())
        for s, e in events(dist <= th.collision_distance + SLACK, trace.dt, th.merge_gap):
            ego_pose = tuple(float(v) for v in (trace.x[s], trace.y[s], trace.heading[s])) + ego[3:]
            side = collision_side(ego_pose, contact_point(ego_pose, o.pose(s)))
            out.append(Violation(
                kind="collision", duration=_span(s, e, trace.dt), value=float(dist[s:e + 1].min()),
                collision_side=side, obstacle_id=oid, obstacle_kind=o.kind.value,
                obstacle_size=(o.length, o.width, o.height), obstacle_speed=float(o.speed[s]),
                obstacle_heading=float(o.heading[s]), **_ego_fields(trace, s)))
    out.sort(key=lambda v: (v.t_first, v.obstacle_id))
    return out, dmin


def check_speeding(trace: Trace, lane_map: LaneMap, th: Thresholds | None = None):
    """Speed violations (overshoot above ``beta_safe``) and f_speed = min(limit - speed)."""
    th = th or Thresholds()
    limits = np.array([lane_map.lane(lid).speed_limit for lid in trace.lane])
    over = trace.speed - limits
    out = []
    for s, e in events(over > th.beta_safe + SLACK, trace.dt, th.merge_gap):
        out.append(Violation(kind="speed", duration=_span(s, e, trace.dt), value=float(over[s:e + 1].max()),
                             **_ego_fields(trace, s)))
    return out, float(-over.max())


def check_unsafe_lane_change(trace: Trace, th: Thresholds | None = None):
    """One violation per straddle episode longer than ``delta_safe``; f = longest episode."""
    th = th or Thresholds()
    out, longest = [], 0.0
    for s, e in runs(trace.straddle):
        length = _span(s, e, trace.dt)
        longest = max(longest, length)
        if length > th.delta_safe + SLACK:
            out.append(Violation(kind="unsafeChange", duration=length, value=length, **_ego_fields(trace, s)))
    return out, longest


def _accel_events(trace, mask, kind, pick, th):
    out = []
    for s, e in events(mask, trace.dt, th.merge_gap):
        out.append(Violation(kind=kind, duration=_span(s, e, trace.dt), value=float(pick(trace.accel[s:e + 1])),
                             **_ego_fields(trace, s)))
    return out


def check_fast_accel(trace: Trace, th: Thresholds | None = None):
    th = th or Thresholds()
    out = _accel_events(trace, trace.accel > th.gamma_comfort + SLACK, "fastAccl", np.max, th)
    return out, float(trace.accel.max())


def check_hard_brake(trace: Trace, th: Thresholds | None = None):
    th = th or Thresholds()
    out = _accel_events(trace, trace.accel < th.epsilon_comfort - SLACK, "hardBrake", np.min, th)
    return out, float(trace.accel.min())


def evaluate(trace: Trace, lane_map: LaneMap, th: Thresholds | None = None) -> Evaluation:
    """Run every oracle; violations come back ordered by time then kind."""
    th = th or Thresholds()
    coll, dmin = check_collision(trace, th)
    speed, f_speed = check_speeding(trace, lane_map, th)
    unsafe, f_unsafe = check_unsafe_lane_change(trace, th)
    fast, f_fast = check_fast_accel(trace, th)
    hard, f_hard = check_hard_brake(trace, th)
    f_coll = min(dmin.values()) if dmin else NO_OBSTACLE_DISTANCE
    objectives = ObjectiveVector(f_coll, f_speed, f_unsafe, f_fast, f_hard)
    violations = sorted(coll + speed + unsafe + fast + hard, key=lambda v: (v.t_first, KINDS.index(v.kind)))
    return Evaluation(violations, objectives, dmin)


# --- output ---------------------------------------------------------------------------

CSV_COLUMNS = ("scenario_id", "kind", "t_first", "duration", "value", "ego_x", "ego_y", "ego_speed",
               "ego_heading", "collision_side", "obstacle_id", "obstacle_kind")


def violations_to_json(violations, objectives: ObjectiveVector | None = None, **extra) -> dict:
    doc = {"format": "violations", "version": 1, **extra, "violations": [v.to_dict() for v in violations]}
    if objectives is not None:
        doc["objectives"] = objectives.to_dict()
    return doc


def write_violations(path, violations, objectives: ObjectiveVector | None = None, **extra) -> None:
    Path(path).write_text(json.dumps(violations_to_json(violations, objectives, **extra), indent=1,
                                     sort_keys=True) + "\n")


def read_violations(path) -> list:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "violations":
        raise ValueError(f"{path}: not a violations file")
    return [Violation.from_dict(v) for v in doc["violations"]]


def violation_rows(violations):
    for v in violations:
        yield {"scenario_id": v.scenario_id, "kind": v.kind, "t_first": v.t_first, "duration": v.duration,
               "value": v.value, "ego_x": v.ego_position.x, "ego_y": v.ego_position.y, "ego_speed": v.ego_speed,
               "ego_heading": v.ego_heading, "collision_side": v.collision_side or "",
               "obstacle_id": "" if v.obstacle_id is None else v.obstacle_id, "obstacle_kind": v.obstacle_kind or ""}


def write_violations_csv(path, violations) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(violation_rows(violations))


__all__ = [
    "KINDS", "SIDES", "Thresholds", "PolygonPose", "Violation", "Evaluation", "polygon_distance",
    "check_collision", "check_speeding", "check_unsafe_lane_change", "check_fast_accel", "check_hard_brake",
    "evaluate", "write_violations", "read_violations", "write_violations_csv", "events", "runs",
    "collision_side", "contact_point",
]
