import math
from dataclasses import replace

import numpy as np
import pytest

from scenario_forge.model import Mobility, ObstacleGenome, ObstacleKind
from scenario_forge.validity import (
    KINDS,
    ConstraintTable,
    TypeBounds,
    default_constraints,
    load_constraints,
    repair,
    sample_obstacle,
    validate,
)

KMH = 3.6


def pedestrian(**kw):
    base = dict(id=1, start=(1.75, 60.0), end=(1.75, 100.0), heading=math.pi / 2, length=0.3, width=0.5,
                height=1.5, speed=2.0, kind="PEDESTRIAN", mobility="DYNAMIC")
    base.update(kw)
    return ObstacleGenome(**base)


def test_constraint_table_units():
    t = default_constraints()
    assert t[ObstacleKind.PEDESTRIAN].speed == pytest.approx((1.25, 2.916667), abs=1e-6)
    assert t[ObstacleKind.VEHICLE].speed == pytest.approx((8 / KMH, 110 / KMH))
    assert t[ObstacleKind.BICYCLE].length == (1.5, 2.0)
    assert t.static_probability == 0.1


def test_constraint_table_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        TypeBounds(width=(2, 1), length=(1, 2), height=(1, 2), speed=(1, 2))


def test_custom_constraint_file(tmp_path):
    text = "\n".join(f"[{k.value}]\nheight=[1,2]\nwidth=[1,2]\nlength=[1,2]\nspeed_kmh=[36,72]" for k in KINDS)
    path = tmp_path / "c.toml"
    path.write_text("static_probability = 0.5\n" + text)
    table = load_constraints(path)
    assert isinstance(table, ConstraintTable)
    assert table[ObstacleKind.BICYCLE].speed == pytest.approx((10.0, 20.0))
    assert table.static_probability == 0.5


def test_valid_pedestrian_has_no_breaches(grid):
    assert validate(pedestrian(), grid) == []


def test_pedestrian_at_60_kmh_breaches_speed(grid):
    breaches = validate(pedestrian(speed=16.67), grid)
    assert [str(b) for b in breaches] == ["speed exceeds kind max"]


def test_unreachable_end_breaches_route(corridor):
    g = ObstacleGenome(1, (300.0, -5.25), (100.0, -5.25), 0.0, 4.5, 1.8, 1.5, 10.0, "VEHICLE", "DYNAMIC")
    assert [str(b) for b in validate(g, corridor)] == ["no valid path"]
    # the same points are fine for a parked obstacle, which needs no path
    assert validate(replace(g, mobility=Mobility.STATIC), corridor) == []


@pytest.mark.parametrize("gene, value, message", [
    ("height", 0.1, "height below kind min"),
    ("width", 9.0, "width exceeds kind max"),
    ("length", float("nan"), "length is not finite"),
    ("heading", 4.0, "heading outside (-pi, pi]"),
    ("start", (1000.0, 1000.0), "start off map"),
    ("end", (-500.0, 0.0), "end off map"),
])
def test_single_gene_breaches(grid, gene, value, message):
    assert [str(b) for b in validate(pedestrian(**{gene: value}), grid)] == [message]


def test_repair_is_identity_on_valid_input(grid, rng):
    g = pedestrian()
    assert repair(g, None, grid, rng) is g


def test_repair_resamples_only_the_breached_gene(grid, rng):
    bad = pedestrian(speed=16.67)
    fixed = repair(bad, None, grid, rng)
    assert 1.25 <= fixed.speed <= 2.9167
    assert replace(fixed, speed=bad.speed) == bad


def random_invalid_genome(r, lane_map):
    min_x, min_y, max_x, max_y = lane_map.bounding_box
    kind = KINDS[int(r.integers(3))]

    def point():
        if r.random() < 0.5:
            return lane_map.sample_point(r)[0]
        return (r.uniform(min_x - 50, max_x + 50), r.uniform(min_y - 50, max_y + 50))

    return ObstacleGenome(
        id=int(r.integers(1, 100)), start=point(), end=point(), heading=r.uniform(-6, 6),
        length=r.uniform(-1, 15), width=r.uniform(-1, 4), height=r.uniform(-1, 5), speed=r.uniform(-5, 40),
        kind=kind, mobility=Mobility.STATIC if r.random() < 0.2 else Mobility.DYNAMIC)


def test_repair_makes_10000_invalid_genomes_valid(grid):
    r = np.random.default_rng(2024)
    repaired = 0
    while repaired < 10_000:
        g = random_invalid_genome(r, grid)
        if not validate(g, grid):
            continue
        fixed = repair(g, None, grid, r)
        assert validate(fixed, grid) == []
        assert (fixed.id, fixed.kind, fixed.mobility) == (g.id, g.kind, g.mobility)
        repaired += 1


def test_sample_obstacle_golden_seed_42(grid):
    g = sample_obstacle(None, grid, np.random.default_rng(42), 1)
    assert g.to_dict() == {
        "id": 1, "start": [301.75, 117.96136696538781], "end": [1.75, 217.54892033227117],
        "heading": 1.5707963267948966, "length": 7.230466737892445, "width": 2.444457711902521,
        "height": 3.252630481366219, "speed": 4.890580412372293, "kind": "VEHICLE", "mobility": "DYNAMIC",
    }
    assert validate(g, grid) == []


def test_sampled_kinds_are_uniform(grid):
    r = np.random.default_rng(7)
    n = 10_000
    samples = [sample_obstacle(None, grid, r, i) for i in range(n)]
    assert all(not validate(g, grid) for g in samples[:500])
    p = 1 / 3
    sigma = math.sqrt(n * p * (1 - p))
    for kind in KINDS:
        count = sum(g.kind is kind for g in samples)
        assert abs(count - n * p) <= 3 * sigma
    statics = [g for g in samples if g.is_static]
    assert statics and all(g.start == g.end for g in statics)
    assert abs(len(statics) - 0.1 * n) <= 3 * math.sqrt(n * 0.1 * 0.9)
