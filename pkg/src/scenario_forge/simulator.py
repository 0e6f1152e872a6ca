"""Kinematic scenario player with a rule-based ego planner and record files.

The ego follows its lane route under a deliberately imperfect planner:

* it tracks ``lane limit + overshoot`` with a proportional law, clipped to
  ``[max_brake, max_accel]``;
* it sees obstacles ``reaction_delay`` seconds late and predicts them at
  constant velocity over ``horizon`` seconds;
* it brakes for the first predicted overlap between an obstacle and its own
  box stretched ``standoff`` metres forward;
* lane changes blend the lateral offset to zero over ``lane_change_time`` but
  stall while an obstacle in the target lane is within
  ``lane_change_clearance`` metres.

``docs/planner-contract.md`` describes the law in full.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Polyline, rect_corners, rect_distance, rect_overlap, wrap_angle
from .lane_map import LaneMap, MapPoint, RoutePath
from .model import ObstacleGenome, ObstacleKind, ScenarioGenome

SCHEMA_VERSION = 1
DIGITS = 9


class SchemaVersionError(ValueError):
    """The record file was written by an incompatible schema version."""


class SimulationError(RuntimeError):
    """Input that should have been rejected by validation reached the simulator."""


@dataclass(frozen=True)
class PlannerConfig:
    dt: float = 0.1
    overshoot: float = 1.67
    gain: float = 0.25  # 1/s, speed tracking
    max_accel: float = 4.5
    max_brake: float = -6.0
    comfort_decel: float = 2.0
    reaction_delay: float = 0.5
    horizon: float = 3.0
    horizon_step: float = 0.25
    standoff: float = 4.0
    side_margin: float = 0.2
    stop_margin: float = 0.25
    probe_speed: float = 3.0
    lane_change_time: float = 3.0
    lane_change_clearance: float = 10.0
    ego_length: float = 4.93
    ego_width: float = 2.11
    ego_height: float = 1.48

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_accel <= 0 or self.max_brake >= 0:
            raise ValueError("need max_accel > 0 > max_brake")

    @property
    def ego_dimensions(self) -> tuple:
        return (self.ego_length, self.ego_width, self.ego_height)


def n_ticks(duration: float, dt: float) -> int:
    return int(math.ceil(duration / dt - 1e-9)) + 1


def _r(a):
    # round and fold -0.0 into 0.0 so serialisation is canonical
    return np.round(np.asarray(a, dtype=float), DIGITS) + 0.0


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObstacleTrajectory:
    id: int
    kind: ObstacleKind
    length: float
    width: float
    height: float
    static: bool
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "heading", "speed"):
            object.__setattr__(self, name, _frozen(_r(getattr(self, name))))

    def pose(self, j: int) -> tuple:
        return (float(self.x[j]), float(self.y[j]), float(self.heading[j]), self.length, self.width)

    def meta(self) -> dict:
        return {"id": self.id, "kind": ObstacleKind(self.kind).value, "static": self.static,
                "length": self.length, "width": self.width, "height": self.height}

    def __eq__(self, other):
        if not isinstance(other, ObstacleTrajectory):
            return NotImplemented
        return self.meta() == other.meta() and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("x", "y", "heading", "speed"))

    __hash__ = None


@dataclass(frozen=True)
class EgoState:
    t: float
    position: MapPoint
    heading: float
    speed: float
    acceleration: float
    current_lane: str
    straddling: bool


@dataclass(frozen=True)
class Trace:
    map_id: str
    scenario_id: str
    dt: float
    ego_dimensions: tuple
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    lane: tuple
    straddle: np.ndarray
    obstacles: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("t", "x", "y", "heading", "speed", "accel"):
            object.__setattr__(self, name, _frozen(_r(getattr(self, name))))
        object.__setattr__(self, "straddle", _frozen(self.straddle, bool))
        object.__setattr__(self, "lane", tuple(self.lane))
        object.__setattr__(self, "ego_dimensions", tuple(float(v) for v in self.ego_dimensions))
        n = len(self.t)
        series = [self.x, self.y, self.heading, self.speed, self.accel, self.straddle, self.lane]
        series += [getattr(o, k) for o in self.obstacles.values() for k in ("x", "y", "heading", "speed")]
        if any(len(s) != n for s in series):
            raise ValueError("all trace series must have the same length")

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def ego_pose(self, j=slice(None)) -> tuple:
        length, width, _ = self.ego_dimensions
        return (self.x[j], self.y[j], self.heading[j], length, width)

    def ego_state(self, j: int) -> EgoState:
        return EgoState(float(self.t[j]), MapPoint(float(self.x[j]), float(self.y[j])), float(self.heading[j]),
                        float(self.speed[j]), float(self.accel[j]), self.lane[j], bool(self.straddle[j]))

    def ego_states(self) -> list:
        return [self.ego_state(j) for j in range(len(self))]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        same = (self.map_id, self.scenario_id, self.dt, self.ego_dimensions, self.lane) == \
            (other.map_id, other.scenario_id, other.dt, other.ego_dimensions, other.lane)
        arrays = ("t", "x", "y", "heading", "speed", "accel", "straddle")
        return same and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in arrays) \
            and self.obstacles == other.obstacles

    __hash__ = None


# --- route geometry ------------------------------------------------------------

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def route_polyline_points(lane_map: LaneMap, route: RoutePath, blend: float = 20.0) -> np.ndarray:
    """Dense points along a route; lane changes become smooth lateral shifts.

    After a lane change the lateral jump onto the new lane decays with a
    smoothstep profile over ``blend`` metres (or the whole piece if shorter).
    """
    out = []
    pending = None
    for (lane_id, a, b), how in zip(route.pieces, route.transitions):
        lane = lane_map.lane(lane_id)
        pl = lane.polyline
        if how == "change" and out:
            pending = pl.project(out[-1])[1]
        if b - a <= 1e-9:
            if not out:
                out.append(pl.point_at(a))
            continue
        inner = pl.cum[(pl.cum > a) & (pl.cum < b)]
        s = np.concatenate([[a], inner, [b]])
        if pending:
            ramp = min(blend, b - a)
            s = np.union1d(s, np.linspace(a, a + ramp, int(ramp) + 2))
            off = pending * (1.0 - _smoothstep((s - a) / ramp))
            pts = pl.point_at(s) + off[:, None] * pl.normal_at(s)
            pending = None
        else:
            pts = pl.point_at(s)
        out.extend(pts)
    pts = np.asarray(out, dtype=float).reshape(-1, 2)
    if len(pts) > 1:
        keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-6])
        pts = pts[keep]
    return pts


def build_trajectory(g: ObstacleGenome, lane_map: LaneMap, duration: float, dt: float) -> ObstacleTrajectory:
    """Constant-speed motion along the shortest route; static obstacles hold their start pose."""
    n = n_ticks(duration, dt)
    t = np.arange(n) * dt
    meta = dict(id=g.id, kind=g.kind, length=g.length, width=g.width, height=g.height, static=g.is_static)
    if g.is_static:
        return ObstacleTrajectory(x=np.full(n, g.start.x), y=np.full(n, g.start.y),
                                  heading=np.full(n, g.heading), speed=np.zeros(n), **meta)
    route = lane_map.shortest_route(g.start, g.end)
    if route is None:
        raise SimulationError(f"obstacle {g.id}: no route from start to end")
    pts = route_polyline_points(lane_map, route)
    if len(pts) < 2:
        p = pts[0]
        return ObstacleTrajectory(x=np.full(n, p[0]), y=np.full(n, p[1]), heading=np.full(n, g.heading),
                                  speed=np.zeros(n), **meta)
    pl = Polyline(pts)
    s = np.minimum(g.speed * t, pl.length)
    xy = pl.point_at(s)
    moving = g.speed * t < pl.length
    # the tick that reaches the end still reports travel speed; later ticks are parked
    arrived = np.concatenate([[False], ~moving[:-1]])
    return ObstacleTrajectory(x=xy[:, 0], y=xy[:, 1], heading=pl.heading_at(s),
                              speed=np.where(arrived, 0.0, g.speed), **meta)


class _EgoRoute:
    """Route pieces laid end to end along a single arc-length coordinate."""

    def __init__(self, lane_map: LaneMap, route: RoutePath):
        self.lane_map = lane_map
        pieces = [(lid, a, b, how) for (lid, a, b), how in zip(route.pieces, route.transitions)]
        kept, changed = [], False
        for lid, a, b, how in pieces:
            changed = changed or how == "change"
            if b - a > 1e-9:
                kept.append((lid, a, b, changed))
                changed = False
        if not kept:
            lid, a, _, _ = pieces[-1]
            kept.append((lid, a, a, False))
        self.first_point = lane_map.lane(pieces[0][0]).point_at(pieces[0][1])
        self.lane_ids = [k[0] for k in kept]
        self.s0 = np.array([k[1] for k in kept])
        self.len = np.array([k[2] - k[1] for k in kept])
        self.entered_by_change = [k[3] for k in kept]
        self.cum = np.concatenate([[0.0], np.cumsum(self.len)])
        self.length = float(self.cum[-1])
        self.lines = [lane_map.lane(lid).polyline for lid in self.lane_ids]
        self.cum_list = self.cum.tolist()

    def piece(self, d):
        d = np.asarray(d, dtype=float)
        return np.clip(np.searchsorted(self.cum, d, side="right") - 1, 0, len(self.len) - 1)

    def pose1(self, d: float) -> tuple:
        """Scalar :meth:`pose` without array overhead."""
        d = min(max(d, 0.0), self.length)
        k = min(max(bisect.bisect_right(self.cum_list, d) - 1, 0), len(self.lane_ids) - 1)
        pl = self.lines[k]
        s = min(max(self.s0[k] + d - self.cum[k], 0.0), pl.length)
        i = min(max(bisect.bisect_right(pl.cum_list, s) - 1, 0), len(pl.seg_len) - 1)
        local = s - pl.cum[i]
        x = pl.points[i, 0] + pl.seg_dir[i, 0] * local
        y = pl.points[i, 1] + pl.seg_dir[i, 1] * local
        frac = local / pl.seg_len[i]
        h = pl._vertex_heading[i] * (1.0 - frac) + pl._vertex_heading[i + 1] * frac
        return float(x), float(y), float(wrap_angle(h))

    def pose(self, d):
        """Centerline (x, y, heading) arrays at route distances ``d``."""
        d = np.atleast_1d(np.clip(np.asarray(d, dtype=float), 0.0, self.length))
        idx = self.piece(d)
        x, y, h = np.empty_like(d), np.empty_like(d), np.empty_like(d)
        for k in np.unique(idx):
            m = idx == k
            s = self.s0[k] + d[m] - self.cum[k]
            p = self.lines[k].point_at(s)
            x[m], y[m], h[m] = p[:, 0], p[:, 1], self.lines[k].heading_at(s)
        return x, y, h


class _Planner:
    def __init__(self, route: _EgoRoute, obstacles: list, cfg: PlannerConfig):
        self.route = route
        self.cfg = cfg
        self.obs = obstacles
        if obstacles:
            self.ox = np.stack([o.x for o in obstacles])
            self.oy = np.stack([o.y for o in obstacles])
            self.oh = np.stack([o.heading for o in obstacles])
            self.ov = np.stack([o.speed for o in obstacles])
            self.ol = np.array([o.length for o in obstacles])
            self.ow = np.array([o.width for o in obstacles])
        self.delay = int(round(cfg.reaction_delay / cfg.dt))
        self.taus = np.arange(0.0, cfg.horizon + 1e-9, cfg.horizon_step)

    def _conflict(self, idx, q, d, v_probe, offset, taus):
        """Boolean (len(taus),): any selected obstacle overlaps the stretched ego box."""
        cfg = self.cfg
        ex, ey, eh = self.route.pose(d + v_probe * taus)
        ex = ex - offset * np.sin(eh) + 0.5 * cfg.standoff * np.cos(eh)
        ey = ey + offset * np.cos(eh) + 0.5 * cfg.standoff * np.sin(eh)
        el, ew = cfg.ego_length + cfg.standoff, cfg.ego_width + 2.0 * cfg.side_margin
        oh = self.oh[idx, q]
        ox = self.ox[idx, q][:, None] + (self.ov[idx, q] * np.cos(oh))[:, None] * taus[None, :]
        oy = self.oy[idx, q][:, None] + (self.ov[idx, q] * np.sin(oh))[:, None] * taus[None, :]
        # bounding circles first; the exact test only runs on pairs that may touch
        reach = 0.5 * (math.hypot(el, ew) + np.hypot(self.ol[idx], self.ow[idx]))
        k, t = np.nonzero(np.hypot(ox - ex[None, :], oy - ey[None, :]) <= reach[:, None])
        hits = np.zeros(len(taus), dtype=bool)
        if k.size == 0:
            return hits
        ego = rect_corners(ex[t], ey[t], eh[t], el, ew)
        obs = rect_corners(ox[k, t], oy[k, t], oh[k], self.ol[idx][k], self.ow[idx][k])
        hits[t[rect_overlap(ego, obs, eh[t], oh[k])]] = True
        return hits

    def free_distance(self, j, d, v, x, y, h, offset) -> float:
        """Distance the ego may still travel before a predicted conflict."""
        if not self.obs:
            return math.inf
        cfg = self.cfg
        q = max(j - self.delay, 0)
        v_probe = max(v, cfg.probe_speed)
        rx, ry = self.ox[:, q] - x, self.oy[:, q] - y
        ahead = rx * math.cos(h) + ry * math.sin(h) >= 0.0
        reach = cfg.horizon * (v_probe + self.ov[:, q]) + cfg.standoff + 0.5 * (self.ol + cfg.ego_length) + 5.0
        idx = np.flatnonzero(ahead & (np.hypot(rx, ry) <= reach))
        if idx.size == 0:
            return math.inf
        hits = self._conflict(idx, q, d, v_probe, offset, self.taus)
        if not hits.any():
            return math.inf
        k = int(np.argmax(hits))
        if k == 0:
            return 0.0
        # refine inside the bracketing interval with one dense sample
        fine = np.linspace(self.taus[k - 1], self.taus[k], 17)
        fine_hits = self._conflict(idx, q, d, v_probe, offset, fine[1:-1])
        fine_hits = np.concatenate([[False], fine_hits, [True]])
        last_free = fine[int(np.argmax(fine_hits)) - 1]
        return max(v_probe * last_free - cfg.stop_margin, 0.0)

    def target_lane_blocked(self, j, x, y, h, lane_id) -> bool:
        if not self.obs:
            return False
        cfg = self.cfg
        q = max(j - self.delay, 0)
        near = np.flatnonzero(np.hypot(self.ox[:, q] - x, self.oy[:, q] - y)
                              <= cfg.lane_change_clearance + 0.5 * (self.ol + cfg.ego_length) + 1.0)
        if near.size == 0:
            return False
        lane = self.route.lane_map.lane(lane_id)
        dist = rect_distance((x, y, h, cfg.ego_length, cfg.ego_width),
                             (self.ox[near, q], self.oy[near, q], self.oh[near, q], self.ol[near], self.ow[near]))
        for k, dd in zip(near, np.atleast_1d(dist)):
            if dd <= cfg.lane_change_clearance and \
                    abs(lane.polyline.project((self.ox[k, q], self.oy[k, q]))[1]) <= lane.width / 2.0:
                return True
        return False


def stop_speed_cap(free: float, cfg: PlannerConfig) -> float:
    """Largest next-tick speed from which the ego can still stop within ``free`` metres.

    Derived for the discrete update ``d += v_next * dt`` with speed falling by
    ``comfort_decel * dt`` per tick, so an ego riding the cap decelerates at
    exactly ``comfort_decel`` and stops on the mark without a final jerk.
    """
    if free <= 0.0:
        return 0.0
    bdt = cfg.comfort_decel * cfg.dt
    return 0.5 * (math.sqrt(bdt * bdt + 8.0 * cfg.comfort_decel * free) - bdt)


def simulate(s: ScenarioGenome, lane_map: LaneMap, cfg: PlannerConfig | None = None) -> Trace:
    """Run one scenario and return its trace.

    The result depends only on the inputs; all values are rounded to 1e-9
    so the record file is byte-stable.
    """
    cfg = cfg or PlannerConfig()
    dt = cfg.dt
    n = n_ticks(s.duration, dt)
    route_path = lane_map.shortest_route(s.ego_start, s.ego_end)
    if route_path is None:
        raise SimulationError("ego has no route from start to end")
    route = _EgoRoute(lane_map, route_path)
    obstacles = [build_trajectory(g, lane_map, s.duration, dt) for g in s.obstacles]
    planner = _Planner(route, obstacles, cfg)

    xs, ys, hs = np.empty(n), np.empty(n), np.empty(n)
    vs = np.zeros(n)
    ref = []
    d, v = 0.0, 0.0
    piece = 0
    offset, rate = 0.0, 0.0
    if route.entered_by_change[0]:
        offset = route.lines[0].project(route.first_point)[1]
        rate = abs(offset) / cfg.lane_change_time
    arrived = route.length <= 1e-9
    for j in range(n):
        cx, cy, ch = route.pose1(d)
        nx, ny = -math.sin(ch), math.cos(ch)
        x, y = cx + offset * nx, cy + offset * ny
        xs[j], ys[j], vs[j] = x, y, v
        hs[j] = ch
        ref.append(route.lane_ids[piece])
        if j == n - 1:
            break
        # longitudinal
        if arrived:
            v_next = 0.0
        else:
            limit = lane_map.lane(route.lane_ids[piece]).speed_limit
            a = cfg.gain * (limit + cfg.overshoot - v)
            free = min(route.length - d, planner.free_distance(j, d, v, x, y, ch, offset))
            a = min(a, (stop_speed_cap(free, cfg) - v) / dt)
            a = min(max(a, cfg.max_brake), cfg.max_accel)
            v_next = round(max(v + round(a * dt, DIGITS), 0.0), DIGITS)
        step = v_next * dt
        if not arrived and d + step >= route.length - 1e-9:
            step, v_next, arrived = route.length - d, 0.0, True
        # lateral blend
        new_offset = offset
        if offset != 0.0 and v_next > 0.1 and not planner.target_lane_blocked(j, x, y, ch, route.lane_ids[piece]):
            new_offset = math.copysign(max(abs(offset) - rate * dt, 0.0), offset)
        if step > 1e-9 and new_offset != offset:
            hs[j] = wrap_angle(ch + math.atan2(new_offset - offset, step))
        offset = new_offset
        d += step
        new_piece = int(route.piece(d))
        if new_piece != piece:
            if any(route.entered_by_change[piece + 1:new_piece + 1]):
                # re-express the current lateral position against the new lane
                px, py = cx + offset * nx + step * math.cos(ch), cy + offset * ny + step * math.sin(ch)
                offset = route.lines[new_piece].project((px, py))[1]
                rate = abs(offset) / cfg.lane_change_time
            piece = new_piece
        v = v_next

    xs, ys, hs, vs = _r(xs), _r(ys), _r(hs), _r(vs)
    acc = np.zeros(n)
    acc[1:] = np.diff(vs) / dt
    lane_idx, _, lateral, _ = lane_map.project_many(np.column_stack([xs, ys]), ref)
    lanes = [lane_map.lane_id_at(int(k)) for k in lane_idx]
    straddle = np.zeros(n, dtype=bool)
    half = cfg.ego_width / 2.0
    for j, (lid, lat) in enumerate(zip(lanes, lateral)):
        lane = lane_map.lane(lid)
        side = lane.left_neighbor if lat > 0 else lane.right_neighbor
        straddle[j] = side is not None and abs(lat) + half > lane.width / 2.0 + 1e-9
    return Trace(
        map_id=lane_map.map_id, scenario_id=s.scenario_id, dt=dt, ego_dimensions=cfg.ego_dimensions,
        t=np.arange(n) * dt, x=xs, y=ys, heading=hs, speed=vs, accel=acc, lane=lanes, straddle=straddle,
        obstacles={o.id: o for o in obstacles},
    )


# --- record files --------------------------------------------------------------

def _f(v) -> float:
    return float(round(float(v), DIGITS)) + 0.0


def record_lines(trace: Trace):
    header = {
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "map_id": trace.map_id,
        "scenario_id": trace.scenario_id,
        "dt": trace.dt,
        "ticks": len(trace),
        "ego_dimensions": list(trace.ego_dimensions),
        "obstacles": [o.meta() for o in trace.obstacles.values()],
    }
    yield json.dumps(header, sort_keys=True)
    obs = list(trace.obstacles.values())
    for j in range(len(trace)):
        row = {
            "type": "tick",
            "j": j,
            "t": _f(trace.t[j]),
            "ego": {
                "x": _f(trace.x[j]), "y": _f(trace.y[j]), "heading": _f(trace.heading[j]),
                "speed": _f(trace.speed[j]), "accel": _f(trace.accel[j]),
                "lane": trace.lane[j], "straddle": bool(trace.straddle[j]),
            },
            "obstacles": [[o.id, _f(o.x[j]), _f(o.y[j]), _f(o.heading[j]), _f(o.speed[j])] for o in obs],
        }
        yield json.dumps(row, sort_keys=True)


def write_record(trace: Trace, path) -> None:
    Path(path).write_text("\n".join(record_lines(trace)) + "\n")


def read_record(path) -> Trace:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty record")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"{path}: missing header line")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {header.get('schema_version')} unsupported (expected {SCHEMA_VERSION})")
    ticks = [json.loads(line) for line in lines[1:] if line.strip()]
    if len(ticks) != header["ticks"]:
        raise ValueError(f"{path}: header announces {header['ticks']} ticks, found {len(ticks)}")
    ego = {k: [row["ego"][k] for row in ticks] for k in ("x", "y", "heading", "speed", "accel", "lane", "straddle")}
    obstacles = {}
    for k, m in enumerate(header["obstacles"]):
        cols = np.array([row["obstacles"][k][1:] for row in ticks], dtype=float).reshape(len(ticks), 4)
        obstacles[m["id"]] = ObstacleTrajectory(
            id=m["id"], kind=ObstacleKind(m["kind"]), length=m["length"], width=m["width"], height=m["height"],
            static=m["static"], x=cols[:, 0], y=cols[:, 1], heading=cols[:, 2], speed=cols[:, 3])
    return Trace(
        map_id=header["map_id"], scenario_id=header["scenario_id"], dt=header["dt"],
        ego_dimensions=tuple(header["ego_dimensions"]), t=[row["t"] for row in ticks],
        x=ego["x"], y=ego["y"], heading=ego["heading"], speed=ego["speed"], accel=ego["accel"],
        lane=ego["lane"], straddle=ego["straddle"], obstacles=obstacles,
    )
