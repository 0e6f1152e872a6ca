import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from scenario_forge.geometry import rect_distance
from scenario_forge.model import ObstacleGenome, ScenarioGenome
from scenario_forge.oracles import evaluate
from scenario_forge.simulator import (
    PlannerConfig,
    SchemaVersionError,
    SimulationError,
    Trace,
    build_trajectory,
    n_ticks,
    read_record,
    record_lines,
    simulate,
    stop_speed_cap,
    write_record,
)
from scenario_forge.validity import sample_obstacle

GOLDEN = Path(__file__).parent / "data" / "empty_road.jsonl"
CFG = PlannerConfig()
LIMIT = 50 / 3.6


def empty_road():
    far = ObstacleGenome(1, (380.0, 1.75), (380.0, 1.75), math.pi, 4.0, 2.0, 1.5, 5.0, "VEHICLE", "STATIC")
    return ScenarioGenome((10.0, -5.25), (190.0, -5.25), [far], 30.0, "empty-road")


def parked_ahead():
    # westbound lane w_0 has no neighbour; the parked car sits 30 m ahead of the ego
    park = ObstacleGenome(1, (150.0, 1.75), (150.0, 1.75), math.pi, 4.0, 2.0, 1.5, 5.0, "VEHICLE", "STATIC")
    return ScenarioGenome((180.0, 1.75), (10.0, 1.75), [park], 30.0, "parked")


@pytest.fixture(scope="module")
def empty_trace(corridor):
    return simulate(empty_road(), corridor)


def test_tick_count():
    assert n_ticks(30.0, 0.1) == 301
    assert n_ticks(0.25, 0.1) == 4


def test_empty_road_cruises_below_speed_threshold_and_arrives(empty_trace):
    tr = empty_trace
    assert len(tr) == 301
    assert LIMIT < tr.speed.max() <= LIMIT + 8 / 3.6
    assert tr.x[-1] == pytest.approx(190.0, abs=1e-6)
    assert tr.speed[-1] == 0.0
    assert tr.accel.min() >= -4.0 and tr.accel.max() <= 4.0
    assert not tr.straddle.any()


def test_empty_road_matches_golden_record(empty_trace, tmp_path):
    path = tmp_path / "r.jsonl"
    write_record(empty_trace, path)
    assert path.read_bytes() == GOLDEN.read_bytes()


def test_golden_record_regrades_identically(empty_trace, corridor):
    replayed = read_record(GOLDEN)
    assert replayed == empty_trace
    assert evaluate(replayed, corridor) == evaluate(empty_trace, corridor)
    assert evaluate(replayed, corridor).violations == []


def test_stops_behind_parked_obstacle(corridor):
    tr = simulate(parked_ahead(), corridor)
    assert tr.speed[-1] == 0.0
    o = tr.obstacles[1]
    gap = rect_distance(tr.ego_pose(-1), o.pose(-1))
    assert CFG.standoff <= float(gap) < CFG.standoff + 1.0


def test_same_scenario_gives_identical_bytes(corridor):
    a = "\n".join(record_lines(simulate(parked_ahead(), corridor)))
    b = "\n".join(record_lines(simulate(parked_ahead(), corridor)))
    assert a == b


def test_acceleration_is_speed_difference_within_actuation(grid):
    r = np.random.default_rng(3)
    obs = [sample_obstacle(None, grid, r, k + 1) for k in range(20)]
    tr = simulate(ScenarioGenome((0.0, 10.0), (300.0, 300.0), obs), grid)
    assert np.allclose(tr.accel[1:], np.diff(tr.speed) / tr.dt, atol=1e-6)
    assert tr.accel[0] == 0.0
    assert tr.accel.min() >= CFG.max_brake - 1e-6 and tr.accel.max() <= CFG.max_accel + 1e-6
    assert tr.speed.min() >= 0.0
    steps = np.hypot(np.diff(tr.x), np.diff(tr.y))
    # each tick covers at most the next speed times dt (corners cut a little)
    assert np.all(steps <= tr.speed[1:] * tr.dt + 1e-6)


def test_stop_speed_cap_gives_comfort_deceleration():
    v, d = 12.0, 0.0
    free = 60.0
    speeds = []
    while v > 0:
        v = min(v, stop_speed_cap(free - d, CFG))
        speeds.append(v)
        d += v * CFG.dt
        if len(speeds) > 1000:
            break
    decel = -np.diff(speeds) / CFG.dt
    braking = decel[np.flatnonzero(decel > 1e-9)]
    # riding the cap brakes at exactly the comfort rate; the final step may be gentler
    assert np.allclose(braking[1:-1], CFG.comfort_decel, atol=1e-9)
    assert braking.max() <= CFG.comfort_decel + 1e-9
    # off the speed lattice the last partial tick can run over by at most b*dt^2/8
    assert d <= free + CFG.comfort_decel * CFG.dt ** 2 / 8 + 1e-9
    assert stop_speed_cap(0.0, CFG) == 0.0


def test_lane_change_straddles_briefly(corridor):
    tr = simulate(ScenarioGenome((10.0, -5.25), (390.0, -1.75), []), corridor)
    assert tr.y[-1] == pytest.approx(-1.75, abs=1e-6)
    assert 0 < tr.straddle.sum() * tr.dt < 5.0
    assert tr.lane[0] == "e_r0" and tr.lane[-1] == "e_l1"


def test_unroutable_ego_raises(corridor):
    with pytest.raises(SimulationError):
        simulate(ScenarioGenome((300.0, -5.25), (100.0, -5.25), []), corridor)


def test_seventy_obstacles_simulate_quickly(grid):
    r = np.random.default_rng(1)
    obs = [sample_obstacle(None, grid, r, k + 1) for k in range(70)]
    s = ScenarioGenome((0.0, 10.0), (300.0, 300.0), obs)
    simulate(s, grid)  # warm caches
    t0 = time.perf_counter()
    tr = simulate(s, grid)
    assert time.perf_counter() - t0 < 2.0
    assert len(tr.obstacles) == 70


# --- obstacle trajectories ----------------------------------------------------------

def test_static_pedestrian_holds_pose(corridor):
    g = ObstacleGenome(3, (50.0, 1.75), (50.0, 1.75), math.pi, 0.3, 0.5, 1.6, 2.0, "PEDESTRIAN", "STATIC")
    o = build_trajectory(g, corridor, 30.0, 0.1)
    assert len(set(zip(o.x, o.y, o.heading))) == 1
    assert not o.speed.any()


def test_vehicle_moves_at_constant_speed(corridor):
    g = ObstacleGenome(3, (0.0, -5.25), (400.0, -5.25), 0.0, 4.5, 1.8, 1.5, 10.0, "VEHICLE", "DYNAMIC")
    o = build_trajectory(g, corridor, 30.0, 0.1)
    t = np.arange(301) * 0.1
    assert np.allclose(o.x, 10.0 * t, atol=1e-6)
    assert np.allclose(o.speed, 10.0)


def test_vehicle_parks_at_route_end(corridor):
    g = ObstacleGenome(3, (0.0, -5.25), (100.0, -5.25), 0.0, 4.5, 1.8, 1.5, 10.0, "VEHICLE", "DYNAMIC")
    o = build_trajectory(g, corridor, 30.0, 0.1)
    assert o.x[100] == pytest.approx(100.0) and o.speed[100] == 10.0
    assert np.all(o.x[100:] == o.x[100])
    assert not o.speed[101:].any()


# --- records ----------------------------------------------------------------------------

def test_record_round_trip(tmp_path, grid):
    r = np.random.default_rng(8)
    obs = [sample_obstacle(None, grid, r, k + 1) for k in range(5)]
    tr = simulate(ScenarioGenome((0.0, 10.0), (300.0, 300.0), obs, 12.0, "rt"), grid)
    path = tmp_path / "rt.jsonl"
    write_record(tr, path)
    again = read_record(path)
    assert again == tr
    assert evaluate(again, grid) == evaluate(tr, grid)
    header = json.loads(path.read_text().splitlines()[0])
    assert header["ticks"] == 121 and header["schema_version"] == 1


def test_future_schema_version_rejected(tmp_path, empty_trace):
    lines = list(record_lines(empty_trace))
    head = json.loads(lines[0])
    head["schema_version"] = 2
    path = tmp_path / "future.jsonl"
    path.write_text("\n".join([json.dumps(head)] + lines[1:]) + "\n")
    with pytest.raises(SchemaVersionError):
        read_record(path)


def test_truncated_record_rejected(tmp_path, empty_trace):
    path = tmp_path / "short.jsonl"
    path.write_text("\n".join(list(record_lines(empty_trace))[:50]) + "\n")
    with pytest.raises(ValueError, match="ticks"):
        read_record(path)


def test_trace_series_must_align():
    with pytest.raises(ValueError):
        Trace("m", "s", 0.1, (4.93, 2.11, 1.48), t=[0, 0.1], x=[0], y=[0, 0], heading=[0, 0], speed=[0, 0],
              accel=[0, 0], lane=["a", "a"], straddle=[False, False])
