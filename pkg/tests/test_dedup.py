import itertools
import time

import numpy as np
import pytest
from refimpl import quadratic_dbscan, same_partition

from scenario_forge.dedup import (
    FALLBACK_EPS,
    NOISE,
    DedupReport,
    auto_epsilon,
    dbscan,
    dedup,
    extract_features,
    k_distances,
    standardize,
)
from scenario_forge.oracles import KINDS, SIDES, Violation


def collision(x=10.0, y=5.0, side="front", kind="VEHICLE", t=1.0, speed=8.0):
    return Violation("collision", t, 0.3, 0.0, (x, y), speed, 0.5, collision_side=side, obstacle_id=3,
                     obstacle_kind=kind, obstacle_size=(4.5, 1.8, 1.5), obstacle_speed=5.0, obstacle_heading=2.0)


def speeding(x=10.0, y=5.0, value=2.5, t=1.0):
    return Violation("speed", t, 0.4, value, (x, y), 16.0, 0.0)


def jitter_fixture():
    r = np.random.default_rng(21)
    copies = [collision(10 + r.uniform(-0.1, 0.1), 5 + r.uniform(-0.1, 0.1), t=1.0 + k) for k in range(10)]
    return copies + [collision(250.0, 180.0)]


def test_collision_features():
    key, vec = extract_features(collision())
    assert key == ("collision", "front", "VEHICLE")
    assert vec.shape == (11,)
    assert vec[:3].tolist() == [10.0, 5.0, 8.0]
    assert vec[5:8].tolist() == [4.5, 1.8, 1.5]


def test_speeding_features():
    key, vec = extract_features(speeding())
    assert key == ("speed",)
    assert vec.shape == (7,)
    assert vec[-2:].tolist() == [0.4, 2.5]


def test_identical_violations_have_identical_features():
    a, b = extract_features(collision()), extract_features(collision())
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_k_distances_skip_the_point_itself():
    pts = np.array([[0.0], [1.0], [3.0]])
    assert k_distances(pts, 1).tolist() == [1.0, 1.0, 2.0]
    assert k_distances(pts, 2).tolist() == [3.0, 2.0, 3.0]


def test_auto_epsilon_degenerate_inputs():
    assert auto_epsilon(np.zeros((6, 3))) == FALLBACK_EPS
    assert auto_epsilon(np.array([[0.0, 0.0], [1.0, 1.0]])) == FALLBACK_EPS


@pytest.mark.parametrize("spacing", [0.5, 3.0, 40.0])
def test_auto_epsilon_on_equally_spaced_line(spacing):
    line = np.column_stack([np.arange(25) * spacing, np.zeros(25)])
    assert 0.5 * spacing <= auto_epsilon(line) <= 1.5 * spacing


def test_auto_epsilon_on_two_lattice_blobs():
    # two 3x3 lattices of spread 1, 100 apart
    blob = np.array(list(itertools.product([0.0, 0.5, 1.0], repeat=2)))
    pts = np.vstack([blob, blob + [100.0, 0.0]])
    eps = auto_epsilon(pts)
    labels = dbscan(pts, eps)
    assert eps < 100.0
    assert sorted(set(labels.tolist())) == [0, 1]
    assert len(set(labels[:9])) == 1 and len(set(labels[9:])) == 1


def test_auto_epsilon_never_bridges_separated_blobs():
    for seed in range(10):
        r = np.random.default_rng(seed)
        pts = np.vstack([r.uniform(0, 1, (20, 2)), r.uniform(0, 1, (20, 2)) + [100.0, 0.0]])
        labels = dbscan(pts, auto_epsilon(pts))
        left, right = set(labels[:20]) - {NOISE}, set(labels[20:]) - {NOISE}
        assert not left & right


def test_dbscan_basic_shapes():
    tight = np.random.default_rng(0).uniform(0, 0.1, (8, 2))
    assert set(dbscan(tight, 1.0).tolist()) == {0}
    spread = np.arange(6)[:, None] * 10.0
    assert set(dbscan(spread, 1.0).tolist()) == {NOISE}
    assert dbscan(np.empty((0, 2)), 1.0).tolist() == []
    with pytest.raises(ValueError):
        dbscan(tight, 0.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("min_pts", [2, 4])
def test_dbscan_matches_quadratic_reference(seed, min_pts):
    r = np.random.default_rng(seed)
    pts = np.vstack([r.normal(0, 1, (80, 2)), r.normal(4, 0.5, (60, 2)), r.uniform(-6, 10, (60, 2))])
    eps = 0.4
    assert same_partition(dbscan(pts, eps, min_pts).tolist(), quadratic_dbscan(pts, eps, min_pts))


def test_cluster_ids_follow_input_order():
    pts = np.array([[10.0], [0.0], [10.1], [0.1], [50.0]])
    assert dbscan(pts, 0.5).tolist() == [0, 1, 0, 1, NOISE]


def test_standardize_drops_constant_columns():
    x = np.array([[1.0, 5.0], [3.0, 5.0]])
    assert standardize(x).tolist() == [[-1.0], [1.0]]


def test_jittered_duplicates_collapse():
    report = dedup(jitter_fixture())
    assert report.all_count == {"collision": 11}
    assert report.unique_count == {"collision": 2}
    assert report.eliminated_percent("collision") == pytest.approx(100 * 9 / 11)
    assert report.rows() == [{"kind": "collision", "all": 11, "unique": 2, "eliminated_percent": 81.82}]
    # the earliest member represents the cluster
    assert report.unique_indices == [0, 10]


def test_categorical_features_split_partitions():
    vs = [collision(side=s, kind=k) for s in SIDES for k in ("VEHICLE", "BICYCLE")]
    report = dedup(vs)
    assert report.unique_count["collision"] == len(vs)
    assert report.eliminated_percent("collision") == 0.0


def test_all_distinct_violations_are_kept():
    vs = [collision(side=s, x=100.0 * i) for i, s in enumerate(SIDES)]
    vs += [speeding(x=0.0), speeding(x=500.0, value=7.0)]
    report = dedup(vs)
    assert all(report.eliminated_percent(k) == 0.0 for k in report.kinds)
    assert report.unique_indices == list(range(len(vs)))


def test_exact_duplicates_always_merge():
    report = dedup([speeding(), speeding(t=3.0)])
    assert report.unique_count == {"speed": 1}
    assert report.unique_indices == [0]


def test_empty_input():
    report = dedup([])
    assert report.rows() == [] and report.unique_indices == [] and report.cluster_of == []
    assert report.eliminated_percent("speed") == 0.0


def mixed_corpus(n, seed):
    r = np.random.default_rng(seed)
    out = []
    for k in range(n):
        kind = KINDS[k % len(KINDS)]
        x, y = r.choice([0.0, 150.0, 300.0]) + r.normal(0, 0.5), r.choice([0.0, 150.0]) + r.normal(0, 0.5)
        if kind == "collision":
            out.append(collision(x, y, side=SIDES[int(r.integers(4))], t=float(r.integers(300)) / 10))
        else:
            out.append(Violation(kind, float(r.integers(300)) / 10, 0.1 * int(r.integers(1, 20)),
                                 float(r.normal(3, 1)), (x, y), float(r.uniform(0, 15)), float(r.uniform(-3, 3))))
    return out


def test_partition_invariants():
    vs = mixed_corpus(400, 1)
    report = dedup(vs)
    assert sum(report.all_count.values()) == 400
    assert len(report.unique_indices) == sum(report.unique_count.values())
    clusters = {}
    for i, c in enumerate(report.cluster_of):
        clusters.setdefault(c, []).append(i)
    assert len(clusters) == len(report.unique_indices)
    for members in clusters.values():
        assert len({extract_features(vs[i])[0] for i in members}) == 1
        assert len(set(members) & set(report.unique_indices)) == 1
    for k in report.kinds:
        assert 1 <= report.unique_count[k] <= report.all_count[k]


def test_permutation_keeps_counts():
    vs = mixed_corpus(300, 2)
    base = dedup(vs)
    perm = np.random.default_rng(5).permutation(len(vs))
    shuffled = dedup([vs[i] for i in perm])
    assert shuffled.all_count == base.all_count
    assert shuffled.unique_count == base.unique_count


def test_two_thousand_violations_under_a_second():
    vs = mixed_corpus(2000, 3)
    t0 = time.perf_counter()
    report = dedup(vs)
    assert time.perf_counter() - t0 < 1.0
    assert sum(report.all_count.values()) == 2000


def test_report_files(tmp_path):
    report = dedup(jitter_fixture())
    report.write_json(tmp_path / "d.json")
    report.write_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines() == ["kind,all,unique,eliminated_percent",
                                                            "collision,11,2,81.82"]
    assert isinstance(DedupReport().to_dict(), dict)
