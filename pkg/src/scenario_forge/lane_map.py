"""Lane-graph map: loading, validation, projection, routing and headings."""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Polyline

LANE_CHANGE_COST = 5.0
OFF_MAP_MARGIN = 2.0
JOIN_TOLERANCE = 0.5
TIE_TOLERANCE = 1e-6

REQUIRED_LANE_FIELDS = ("id", "width_m", "speed_limit_mps", "centerline", "successors", "predecessors")


class MapError(ValueError):
    """Malformed map file or violated map invariant."""


class OffMapError(ValueError):
    """A point does not lie on any lane."""


class MapPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Projection:
    lane_id: str
    s: float
    lateral: float


@dataclass
class Lane:
    id: str
    centerline: tuple
    width: float
    speed_limit: float
    successors: tuple = ()
    predecessors: tuple = ()
    left_neighbor: str | None = None
    right_neighbor: str | None = None
    polyline: Polyline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.centerline = tuple(MapPoint(float(x), float(y)) for x, y in self.centerline)
        self.successors = tuple(self.successors)
        self.predecessors = tuple(self.predecessors)
        try:
            self.polyline = Polyline(self.centerline)
        except ValueError as exc:
            raise MapError(f"lane {self.id}: {exc}") from None

    @property
    def length(self) -> float:
        return self.polyline.length

    def point_at(self, s: float) -> MapPoint:
        x, y = self.polyline.point_at(s)
        return MapPoint(float(x), float(y))


@dataclass
class RoutePath:
    """A route through the lane graph.

    ``pieces`` holds one ``(lane_id, s_in, s_out)`` triple per entry of
    ``lane_sequence``; ``transitions[i]`` says how piece ``i`` was entered
    (``"start"``, ``"successor"`` or ``"change"``). A lane change happens at
    the entry offset of the target lane, so the piece it leaves has zero
    length.
    """

    lane_sequence: list
    start_offset: float
    end_offset: float
    total_length: float
    pieces: list
    transitions: list
    cost: float

    @property
    def lane_changes(self) -> int:
        return self.transitions.count("change")


class LaneMap:
    def __init__(self, lanes, bounding_box, map_id="map"):
        self.map_id = map_id
        self.lanes = {lane.id: lane for lane in lanes}
        if len(self.lanes) != len(lanes):
            raise MapError("duplicate lane id")
        self.bounding_box = tuple(float(v) for v in bounding_box)  # min_x, min_y, max_x, max_y
        self._order = [lane.id for lane in lanes]
        self._validate()
        self._build_index()

    # -- construction -------------------------------------------------------

    def _validate(self):
        if not self.lanes:
            raise MapError("map must contain ≥1 lane")
        min_x, min_y, max_x, max_y = self.bounding_box
        if not (min_x < max_x and min_y < max_y):
            raise MapError("bounding box is empty")
        for lane in self.lanes.values():
            if not lane.width > 0:
                raise MapError(f"lane {lane.id}: width must be positive")
            if not lane.speed_limit > 0:
                raise MapError(f"lane {lane.id}: speed limit must be positive")
            pts = lane.polyline.points
            if (pts[:, 0].min() < min_x or pts[:, 0].max() > max_x
                    or pts[:, 1].min() < min_y or pts[:, 1].max() > max_y):
                raise MapError(f"lane {lane.id}: centerline leaves the bounding box")
            for ref in (*lane.successors, *lane.predecessors, lane.left_neighbor, lane.right_neighbor):
                if ref is not None and ref not in self.lanes:
                    raise MapError(f"lane {lane.id}: references unknown lane {ref!r}")
            for succ_id in lane.successors:
                succ = self.lanes[succ_id]
                if lane.id not in succ.predecessors:
                    raise MapError(f"lane {lane.id}: successor {succ_id} does not list it as predecessor")
                gap = math.dist(lane.centerline[-1], succ.centerline[0])
                if gap > JOIN_TOLERANCE:
                    raise MapError(f"lane {lane.id}: successor {succ_id} starts {gap:.3f} m from its end")
            for pred_id in lane.predecessors:
                if lane.id not in self.lanes[pred_id].successors:
                    raise MapError(f"lane {lane.id}: predecessor {pred_id} does not list it as successor")
            if lane.left_neighbor is not None:
                if self.lanes[lane.left_neighbor].right_neighbor != lane.id:
                    raise MapError(f"lane {lane.id}: left neighbor {lane.left_neighbor} is not symmetric")
            if lane.right_neighbor is not None:
                if self.lanes[lane.right_neighbor].left_neighbor != lane.id:
                    raise MapError(f"lane {lane.id}: right neighbor {lane.right_neighbor} is not symmetric")

    def _build_index(self):
        starts, dirs, lens, cums, owner = [], [], [], [], []
        for i, lane_id in enumerate(self._order):
            pl = self.lanes[lane_id].polyline
            starts.append(pl.points[:-1])
            dirs.append(pl.seg_dir)
            lens.append(pl.seg_len)
            cums.append(pl.cum[:-1])
            owner.append(np.full(len(pl.seg_len), i))
        self._seg_start = np.concatenate(starts)
        self._seg_dir = np.concatenate(dirs)
        self._seg_len = np.concatenate(lens)
        self._seg_cum = np.concatenate(cums)
        self._seg_owner = np.concatenate(owner)
        self._lane_index = {lane_id: i for i, lane_id in enumerate(self._order)}
        self._lane_segments = [np.flatnonzero(self._seg_owner == i) for i in range(len(self._order))]
        self._half_widths = np.array([self.lanes[l].width / 2.0 for l in self._order])
        # midpoint tree: the nearest midpoint bounds the distance to the nearest segment
        self._mid_tree = cKDTree(self._seg_start + self._seg_dir * (self._seg_len[:, None] / 2.0))
        self._half_max = float(self._seg_len.max()) / 2.0
        lengths = np.array([self.lanes[l].length for l in self._order])
        self._sample_weights = lengths / lengths.sum()

    # -- queries ------------------------------------------------------------

    @property
    def lane_ids(self):
        return list(self._order)

    def lane(self, lane_id: str) -> Lane:
        return self.lanes[lane_id]

    def project_many(self, points, hints=None):
        """Vectorised :meth:`project` over an (n, 2) array of points.

        Returns ``(lane_index, s, lateral, ok)`` arrays; ``ok`` is False where
        the point is off the map. Only segments whose midpoint could be close
        enough to win are examined.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        bound, _ = self._mid_tree.query(pts)
        cands = self._mid_tree.query_ball_point(pts, bound + self._half_max + 1e-6)
        counts = np.array([len(c) for c in cands])
        row = np.repeat(np.arange(n), counts)
        seg = np.concatenate([np.asarray(c, dtype=int) for c in cands])
        rel = pts[row] - self._seg_start[seg]
        t = np.clip(np.einsum("ik,ik->i", rel, self._seg_dir[seg]), 0.0, self._seg_len[seg])
        foot = self._seg_start[seg] + self._seg_dir[seg] * t[:, None]
        dist = np.hypot(pts[row, 0] - foot[:, 0], pts[row, 1] - foot[:, 1])
        # per point: smallest distance, lowest segment index on exact ties
        order = np.lexsort((seg, dist, row))
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        best = order[first]
        if hints is not None:
            hint_idx = np.array([-1 if h is None else self._lane_index[h] for h in hints])
            on_hint = self._seg_owner[seg] == hint_idx[row]
            if on_hint.any():
                hinted = order[on_hint[order]]
                hrow = row[hinted]
                keep = np.concatenate([[True], hrow[1:] != hrow[:-1]])
                hbest, hrow = hinted[keep], hrow[keep]
                win = dist[hbest] <= dist[best[hrow]] + TIE_TOLERANCE
                best[hrow[win]] = hbest[win]
        bseg = seg[best]
        d = dist[best]
        cross = self._seg_dir[bseg, 0] * rel[best, 1] - self._seg_dir[bseg, 1] * rel[best, 0]
        lateral = np.where(cross >= 0.0, d, -d)
        s_ = self._seg_cum[bseg] + t[best]
        lane_idx = self._seg_owner[bseg]
        ok = d <= self._half_widths[lane_idx] + OFF_MAP_MARGIN
        return lane_idx, s_, lateral, ok

    def project(self, p, hint: str | None = None) -> Projection:
        """Project ``p`` onto the lane whose centerline is nearest.

        When ``hint`` names a lane that is (within 1e-6 m) as close as the
        nearest one, the hinted lane wins; this resolves junctions and
        crossings where several centerlines meet.
        """
        x, y = float(p[0]), float(p[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise OffMapError("point is not finite")
        idx, s, lat, ok = self.project_many([[x, y]], None if hint is None else [hint])
        if not ok[0]:
            raise OffMapError(f"point ({x:.3f}, {y:.3f}) is not on any lane")
        return Projection(self._order[int(idx[0])], float(s[0]), float(lat[0]))

    def lane_id_at(self, index: int) -> str:
        return self._order[index]

    def heading_at(self, lane_id: str, s: float) -> float:
        lane = self.lanes[lane_id]
        if s < -1e-9 or s > lane.length + 1e-9:
            raise ValueError(f"s={s} outside lane {lane_id} of length {lane.length:.3f}")
        return float(lane.polyline.heading_at(s))

    def sample_point(self, rng) -> tuple[MapPoint, str, float]:
        """Uniform point on the union of centerlines."""
        i = int(rng.choice(len(self._order), p=self._sample_weights))
        lane = self.lanes[self._order[i]]
        s = float(rng.uniform(0.0, lane.length))
        return lane.point_at(s), lane.id, s

    # -- routing ------------------------------------------------------------

    def route_between(self, src: Projection, dst: Projection,
                      lane_change_cost: float = LANE_CHANGE_COST) -> RoutePath | None:
        """Dijkstra over (lane, entry offset) states."""
        goal = ("__goal__", 0.0)
        tie = itertools.count()
        start = (src.lane_id, src.s)
        heap = [(0.0, next(tie), start, None, "start")]
        parent = {}
        while heap:
            cost, _, node, prev, how = heapq.heappop(heap)
            key = (node[0], round(node[1], 9))
            if key in parent:
                continue
            parent[key] = (prev, how, node)
            if node == goal:
                return self._assemble_route(parent, key, cost, src, dst)
            lane_id, entry = node
            lane = self.lanes[lane_id]
            if lane_id == dst.lane_id and dst.s >= entry - 1e-9:
                heapq.heappush(heap, (cost + max(dst.s - entry, 0.0), next(tie), goal, key, "goal"))
            for succ in lane.successors:
                heapq.heappush(heap, (cost + lane.length - entry, next(tie), (succ, 0.0), key, "successor"))
            for nbr in (lane.left_neighbor, lane.right_neighbor):
                if nbr is None:
                    continue
                mapped = entry * self.lanes[nbr].length / lane.length
                heapq.heappush(heap, (cost + lane_change_cost, next(tie), (nbr, mapped), key, "change"))
        return None

    def _assemble_route(self, parent, goal_key, cost, src, dst):
        nodes = []
        prev, how, _ = parent[goal_key]
        key = prev
        while key is not None:
            p, how, node = parent[key]
            nodes.append((node, how))
            key = p
        nodes.reverse()
        pieces, transitions = [], []
        for i, (node, how) in enumerate(nodes):
            lane_id, entry = node
            if i + 1 < len(nodes):
                nxt_how = nodes[i + 1][1]
                s_out = self.lanes[lane_id].length if nxt_how == "successor" else entry
            else:
                s_out = dst.s
            pieces.append((lane_id, float(entry), float(s_out)))
            transitions.append(how)
        total = float(sum(b - a for _, a, b in pieces))
        return RoutePath(
            lane_sequence=[p[0] for p in pieces],
            start_offset=float(src.s),
            end_offset=float(dst.s),
            total_length=total,
            pieces=pieces,
            transitions=transitions,
            cost=float(cost),
        )

    def shortest_route(self, src, dst, lane_change_cost: float = LANE_CHANGE_COST) -> RoutePath | None:
        return self.route_between(self.project(src), self.project(dst), lane_change_cost)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        min_x, min_y, max_x, max_y = self.bounding_box
        return {
            "map_id": self.map_id,
            "bounding_box": {"min_x": min_x, "min_y": min_y, "max_x": max_x, "max_y": max_y},
            "lanes": [
                {
                    "id": lane.id,
                    "width_m": lane.width,
                    "speed_limit_mps": lane.speed_limit,
                    "centerline": [[p.x, p.y] for p in lane.centerline],
                    "successors": list(lane.successors),
                    "predecessors": list(lane.predecessors),
                    "left_neighbor": lane.left_neighbor,
                    "right_neighbor": lane.right_neighbor,
                }
                for lane in (self.lanes[i] for i in self._order)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, map_id: str | None = None) -> "LaneMap":
        if not isinstance(data, dict):
            raise MapError("map document must be a JSON object")
        try:
            bb = data["bounding_box"]
            box = (bb["min_x"], bb["min_y"], bb["max_x"], bb["max_y"])
        except (KeyError, TypeError):
            raise MapError("missing or malformed bounding_box") from None
        raw_lanes = data.get("lanes")
        if not isinstance(raw_lanes, list):
            raise MapError("missing lanes array")
        lanes = []
        for n, raw in enumerate(raw_lanes):
            missing = [k for k in REQUIRED_LANE_FIELDS if k not in raw]
            if missing:
                raise MapError(f"lane {raw.get('id', '#' + str(n))}: missing field(s) {', '.join(missing)}")
            lanes.append(Lane(
                id=str(raw["id"]),
                centerline=raw["centerline"],
                width=float(raw["width_m"]),
                speed_limit=float(raw["speed_limit_mps"]),
                successors=[str(x) for x in raw["successors"]],
                predecessors=[str(x) for x in raw["predecessors"]],
                left_neighbor=raw.get("left_neighbor"),
                right_neighbor=raw.get("right_neighbor"),
            ))
        return cls(lanes, box, map_id or data.get("map_id", "map"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def load_map(path) -> LaneMap:
    """Load and validate a JSON lane-graph map."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MapError(f"{path}: not valid JSON ({exc})") from None
    return LaneMap.from_dict(data, map_id=data.get("map_id", path.stem) if isinstance(data, dict) else None)


def bundled_map_path(name: str) -> Path:
    """Path of a map shipped with the package (``corridor``, ``grid_3x3``, ``loop_merge``)."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("scenario_forge") / "data" / "maps" / name))


def load_bundled_map(name: str) -> LaneMap:
    return load_map(bundled_map_path(name))


def project(lane_map: LaneMap, p, hint=None) -> Projection:
    return lane_map.project(p, hint)


def shortest_route(lane_map: LaneMap, src, dst) -> RoutePath | None:
    return lane_map.shortest_route(src, dst)


def heading_at(lane_map: LaneMap, lane_id: str, s: float) -> float:
    return lane_map.heading_at(lane_id, s)
