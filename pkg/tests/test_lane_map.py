import json
import math
from collections import deque

import numpy as np
import pytest

from scenario_forge.lane_map import (
    LANE_CHANGE_COST,
    LaneMap,
    MapError,
    OffMapError,
    bundled_map_path,
    heading_at,
    load_map,
    project,
    shortest_route,
)


def route_cost_oracle(lane_map, src, dst, change_cost=LANE_CHANGE_COST):
    """Label-correcting breadth-first search over (lane, entry offset) states."""
    best = {(src.lane_id, round(src.s, 9)): 0.0}
    queue = deque([(src.lane_id, src.s)])
    goal = math.inf
    while queue:
        lane_id, entry = queue.popleft()
        cost = best[(lane_id, round(entry, 9))]
        lane = lane_map.lane(lane_id)
        if lane_id == dst.lane_id and dst.s >= entry - 1e-9:
            goal = min(goal, cost + max(dst.s - entry, 0.0))
        moves = [(s, 0.0, lane.length - entry) for s in lane.successors]
        moves += [(nb, entry * lane_map.lane(nb).length / lane.length, change_cost)
                  for nb in (lane.left_neighbor, lane.right_neighbor) if nb]
        for nxt, e, w in moves:
            key = (nxt, round(e, 9))
            if cost + w < best.get(key, math.inf) - 1e-12:
                best[key] = cost + w
                queue.append((nxt, e))
    return goal


def test_grid_fixture_has_24_lanes(grid):
    assert len(grid.lane_ids) == 24
    assert grid.map_id == "grid_3x3"


def test_bundled_maps_round_trip(tmp_path, corridor):
    path = tmp_path / "c.json"
    corridor.save(path)
    again = load_map(path)
    assert again.to_dict() == corridor.to_dict()


def _raw(name):
    return json.loads(bundled_map_path(name).read_text())


def test_dangling_successor_names_the_lane(tmp_path):
    raw = _raw("corridor")
    raw["lanes"][0]["successors"].append("nowhere")
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(MapError, match=raw["lanes"][0]["id"]):
        load_map(path)


def test_empty_lane_set_rejected():
    raw = _raw("corridor")
    raw["lanes"] = []
    with pytest.raises(MapError, match="≥1 lane"):
        LaneMap.from_dict(raw)


@pytest.mark.parametrize("mutate, message", [
    (lambda r: r["lanes"][0].pop("width_m"), "missing field"),
    (lambda r: r["lanes"][0].update(width_m=0), "width"),
    (lambda r: r["lanes"][0].update(left_neighbor="w_0"), "not symmetric"),
    (lambda r: r.pop("bounding_box"), "bounding_box"),
])
def test_malformed_maps_rejected(mutate, message):
    raw = _raw("corridor")
    mutate(raw)
    with pytest.raises(MapError, match=message):
        LaneMap.from_dict(raw)


def test_point_on_centerline_projects_to_that_lane(corridor):
    p = corridor.project((55.0, -5.25))
    assert p.lane_id == "e_r0"
    assert p.s == pytest.approx(55.0, abs=1e-9)
    assert p.lateral == pytest.approx(0.0, abs=1e-9)


def test_lateral_is_signed_left_positive(corridor):
    assert corridor.project((55.0, -4.25), hint="e_r0").lateral == pytest.approx(1.0, abs=1e-6)
    assert corridor.project((55.0, -6.25)).lateral == pytest.approx(-1.0, abs=1e-6)


def test_far_point_is_off_map(corridor):
    with pytest.raises(OffMapError):
        project(corridor, (510.0, 0.0))
    with pytest.raises(OffMapError):
        corridor.project((float("nan"), 0.0))


def test_hint_breaks_ties_at_junctions(grid):
    # the node centre lies on every lane that meets there
    node = (150.0, 150.0)
    for lane_id in ("g11_21", "g01_11", "g11_10"):
        assert grid.project(node, hint=lane_id).lane_id == lane_id


@pytest.mark.parametrize("name", ["grid_3x3", "corridor", "loop_merge"])
def test_project_many_matches_brute_force(name):
    lane_map = load_map(bundled_map_path(name))
    r = np.random.default_rng(3)
    min_x, min_y, max_x, max_y = lane_map.bounding_box
    pts = np.column_stack([r.uniform(min_x, max_x, 1500), r.uniform(min_y, max_y, 1500)])
    idx, s, lat, ok = lane_map.project_many(pts)
    for k, p in enumerate(pts):
        per_lane = [(lane_map.lane(l).polyline.project(p)[2], l) for l in lane_map.lane_ids]
        d_best = min(d for d, _ in per_lane)
        assert abs(lat[k]) == pytest.approx(d_best, abs=1e-9)
        lane = lane_map.lane(lane_map.lane_id_at(int(idx[k])))
        assert ok[k] == (d_best <= lane.width / 2.0 + 2.0)
        assert lane.polyline.project(p)[2] == pytest.approx(d_best, abs=1e-9)


def test_same_lane_downstream_route(corridor):
    r = shortest_route(corridor, (20.0, -5.25), (150.0, -5.25))
    assert r.lane_sequence == ["e_r0"]
    assert r.total_length == pytest.approx(130.0, abs=1e-9)
    assert r.lane_changes == 0


def test_upstream_on_one_way_road_is_unreachable(corridor):
    assert corridor.shortest_route((300.0, -5.25), (100.0, -5.25)) is None


def test_lane_change_route_on_corridor(corridor):
    r = corridor.shortest_route((20.0, -5.25), (300.0, -1.75))
    assert r.lane_changes == 1
    assert r.total_length == pytest.approx(280.0, abs=1e-6)
    assert r.cost == pytest.approx(280.0 + LANE_CHANGE_COST, abs=1e-6)


@pytest.mark.parametrize("name", ["grid_3x3", "corridor", "loop_merge"])
def test_route_cost_matches_graph_search_oracle(name):
    lane_map = load_map(bundled_map_path(name))
    r = np.random.default_rng(11)
    for _ in range(150):
        a, b = lane_map.sample_point(r)[0], lane_map.sample_point(r)[0]
        src, dst = lane_map.project(a), lane_map.project(b)
        route = lane_map.route_between(src, dst)
        expected = route_cost_oracle(lane_map, src, dst)
        if route is None:
            assert expected == math.inf
            continue
        assert route.cost == pytest.approx(expected, abs=1e-6)
        assert route.total_length == pytest.approx(route.cost - LANE_CHANGE_COST * route.lane_changes, abs=1e-6)
        # consecutive pieces are linked by the map
        for (l0, _, _), (l1, _, _), how in zip(route.pieces, route.pieces[1:], route.transitions[1:]):
            lane = lane_map.lane(l0)
            allowed = lane.successors if how == "successor" else (lane.left_neighbor, lane.right_neighbor)
            assert l1 in allowed


def test_heading_axis_aligned_lanes(corridor):
    assert heading_at(corridor, "e_r0", 50.0) == pytest.approx(0.0, abs=1e-12)
    assert heading_at(corridor, "w_0", 50.0) == pytest.approx(math.pi, abs=1e-12)
    assert heading_at(corridor, "w_0", 50.0) > 0  # wrapped into (-pi, pi]


def test_heading_on_arc_matches_circle_tangent(loop):
    lane = loop.lane("o_0")
    # o_0 is a counter-clockwise quarter circle from angle 0 to pi/2
    assert loop.heading_at("o_0", lane.length / 2.0) == pytest.approx(math.pi / 4 + math.pi / 2, abs=1e-6)


def test_heading_outside_lane_rejected(corridor):
    with pytest.raises(ValueError):
        corridor.heading_at("e_r0", 1e4)
