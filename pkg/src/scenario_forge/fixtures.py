"""Builders for the bundled synthetic maps.

Run ``python -m scenario_forge.fixtures`` to regenerate the JSON files under
``scenario_forge/data/maps``.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .lane_map import Lane, LaneMap

LANE_WIDTH = 3.5
KMH = 1 / 3.6


def _lane(lane_id, pts, limit, **links):
    return Lane(id=lane_id, centerline=[tuple(map(float, p)) for p in pts], width=LANE_WIDTH,
                speed_limit=round(limit, 4), **links)


def corridor() -> LaneMap:
    """Straight 400 m road: two eastbound lanes, one westbound lane, split at x=200."""
    xs = np.arange(0.0, 200.0 + 1e-9, 10.0)
    limit = 50 * KMH
    lanes = []
    for seg, x0 in enumerate((0.0, 200.0)):
        fwd = np.column_stack([xs + x0, np.zeros_like(xs)])
        lanes.append(_lane(f"e_r{seg}", fwd + [0.0, -5.25], limit,
                           left_neighbor=f"e_l{seg}",
                           successors=["e_r1"] if seg == 0 else [],
                           predecessors=["e_r0"] if seg == 1 else []))
        lanes.append(_lane(f"e_l{seg}", fwd + [0.0, -1.75], limit,
                           right_neighbor=f"e_r{seg}",
                           successors=["e_l1"] if seg == 0 else [],
                           predecessors=["e_l0"] if seg == 1 else []))
        back = fwd[::-1] + [0.0, 1.75]
        lanes.append(_lane(f"w_{seg}", back, limit,
                           successors=["w_0"] if seg == 1 else [],
                           predecessors=["w_1"] if seg == 0 else []))
    return LaneMap(lanes, (-10.0, -15.0, 410.0, 15.0), "corridor")


def _taper(x, length, ramp):
    """Lateral offset profile: 0 at both ends, 1 in the middle, C1-smooth."""
    t_in = np.clip(x / ramp, 0.0, 1.0)
    t_out = np.clip((length - x) / ramp, 0.0, 1.0)
    smooth = lambda t: t * t * (3.0 - 2.0 * t)  # noqa: E731
    return np.minimum(smooth(t_in), smooth(t_out))


def grid_3x3(spacing=150.0) -> LaneMap:
    """3x3 intersections, one lane per travel direction on each of 12 roads.

    Lanes run on the right-hand side of their road and converge onto the node
    centre over the last 20 m, so every turn at a node is a successor join.
    The middle row and column are 60 km/h arterials, the perimeter 40 km/h.
    """
    nodes = [(i, j) for j in range(3) for i in range(3)]
    roads = []
    for i, j in nodes:
        if i < 2:
            roads.append(((i, j), (i + 1, j)))
        if j < 2:
            roads.append(((i, j), (i, j + 1)))
    directed = [(a, b) for a, b in roads] + [(b, a) for a, b in roads]
    name = lambda a, b: f"g{a[0]}{a[1]}_{b[0]}{b[1]}"  # noqa: E731
    xs = np.arange(0.0, spacing + 1e-9, 2.5)
    lanes = []
    for a, b in sorted(directed):
        pa = np.array(a, dtype=float) * spacing
        pb = np.array(b, dtype=float) * spacing
        u = (pb - pa) / spacing
        right = np.array([u[1], -u[0]])
        off = LANE_WIDTH / 2.0 * _taper(xs, spacing, 20.0)
        pts = pa + xs[:, None] * u + off[:, None] * right
        arterial = (a[0] == b[0] == 1) or (a[1] == b[1] == 1)
        succ = [name(b, c) for (bb, c) in sorted(directed) if bb == b and c != a]
        pred = [name(c, a) for (c, aa) in sorted(directed) if aa == a and c != b]
        lanes.append(_lane(name(a, b), pts, (60 if arterial else 40) * KMH,
                           successors=succ, predecessors=pred))
    return LaneMap(lanes, (-20.0, -20.0, 2 * spacing + 20.0, 2 * spacing + 20.0), "grid_3x3")


def _arc(radius, a0, a1, n):
    ang = np.linspace(a0, a1, n + 1)
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def loop_merge(radius=80.0, arc_segments=41) -> LaneMap:
    """Two-lane counter-clockwise ring with an on-ramp merge and an off-ramp."""
    limit = 50 * KMH
    outer_r = radius + LANE_WIDTH / 2.0
    inner_r = radius - LANE_WIDTH / 2.0
    lanes = []
    for k in range(4):
        a0, a1 = k * math.pi / 2.0, (k + 1) * math.pi / 2.0
        nxt, prv = (k + 1) % 4, (k - 1) % 4
        o_succ = [f"o_{nxt}"] + (["exit"] if k == 1 else [])
        o_pred = [f"o_{prv}"] + (["ramp"] if k == 0 else [])
        lanes.append(_lane(f"o_{k}", _arc(outer_r, a0, a1, arc_segments), limit,
                           left_neighbor=f"i_{k}", successors=o_succ, predecessors=o_pred))
        lanes.append(_lane(f"i_{k}", _arc(inner_r, a0, a1, arc_segments), limit,
                           right_neighbor=f"o_{k}", successors=[f"i_{nxt}"], predecessors=[f"i_{prv}"]))
    ys = np.arange(-120.0, 0.0 + 1e-9, 10.0)
    lanes.append(_lane("ramp", np.column_stack([np.full_like(ys, outer_r), ys]), 40 * KMH,
                       successors=["o_0"]))
    lanes.append(_lane("exit", np.column_stack([np.full_like(ys, -outer_r), -120.0 - ys]), 40 * KMH,
                       predecessors=["o_1"]))
    return LaneMap(lanes, (-100.0, -130.0, 100.0, 100.0), "loop_merge")


BUILDERS = {"corridor": corridor, "grid_3x3": grid_3x3, "loop_merge": loop_merge}


def write_all(directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        build().save(directory / f"{name}.json")


if __name__ == "__main__":
    write_all(Path(__file__).parent / "data" / "maps")
