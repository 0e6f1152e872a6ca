"""Duplicate-violation elimination: feature extraction, automatic epsilon and DBSCAN."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .oracles import KINDS, Violation

MIN_PTS = 2
FALLBACK_EPS = 1e-6
NOISE = -1


def extract_features(v: Violation, trace=None) -> tuple:
    """Return ``(partition_key, numeric_vector)`` for one violation.

    Categorical features (collision side, obstacle kind) go into the key so
    they are matched exactly; headings are embedded as (cos, sin). ``trace``
    is accepted for symmetry with the oracles but everything needed is
    already stored on the violation.
    """
    ego = [v.ego_position.x, v.ego_position.y, v.ego_speed, math.cos(v.ego_heading), math.sin(v.ego_heading)]
    if v.kind == "collision":
        key = ("collision", v.collision_side, v.obstacle_kind)
        extra = [*v.obstacle_size, v.obstacle_speed, math.cos(v.obstacle_heading), math.sin(v.obstacle_heading)]
    else:
        key = (v.kind,)
        extra = [v.duration, v.value]
    return key, np.array(ego + extra, dtype=float)


def k_distances(points, k: int = MIN_PTS) -> np.ndarray:
    """Distance from each point to its k-th nearest other point.

    Skipping self makes the estimate a little generous: on a line of equally
    spaced points it equals the spacing, and a uniform blob stays one cluster.
    """
    pts = np.asarray(points, dtype=float)
    d, _ = cKDTree(pts).query(pts, k=k + 1)
    return d[:, k]


def auto_epsilon(points, k: int = MIN_PTS) -> float:
    """Epsilon at the knee of the sorted k-distance curve.

    The knee is the point farthest from the chord joining the first and last
    values once both axes are scaled to [0, 1].
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < k + 1:
        return FALLBACK_EPS
    kd = np.sort(k_distances(pts, k))
    lo, hi = kd[0], kd[-1]
    if hi <= 0.0:
        return FALLBACK_EPS
    if hi - lo <= 1e-12 * hi:
        return float(hi)
    x = np.linspace(0.0, 1.0, len(kd))
    y = (kd - lo) / (hi - lo)
    eps = float(kd[int(np.argmax(np.abs(x - y)))])
    return eps if eps > 0.0 else FALLBACK_EPS


def dbscan(points, eps: float, min_pts: int = MIN_PTS) -> np.ndarray:
    """Plain DBSCAN; clusters are numbered in input order, noise is ``-1``.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        stack = [i]
        while stack:
            p = stack.pop()
            for q in sorted(neighbors[p]):
                if labels[q] == NOISE:
                    labels[q] = cluster
                if core[q] and not visited[q]:
                    visited[q] = True
                    stack.append(q)
        cluster += 1
    return labels


def standardize(x: np.ndarray) -> np.ndarray:
    """Z-score each column and drop columns without variance."""
    std = x.std(axis=0)
    keep = std > 1e-12
    return (x[:, keep] - x[:, keep].mean(axis=0)) / std[keep]


@dataclass
class DedupReport:
    all_count: dict = field(default_factory=dict)
    unique_count: dict = field(default_factory=dict)
    cluster_of: list = field(default_factory=list)  # global cluster id per input violation
    unique_indices: list = field(default_factory=list)
    epsilon: dict = field(default_factory=dict)  # per partition key

    def eliminated_percent(self, kind: str) -> float:
        total = self.all_count.get(kind, 0)
        return 0.0 if total == 0 else 100.0 * (1.0 - self.unique_count[kind] / total)

    @property
    def kinds(self) -> list:
        return [k for k in KINDS if k in self.all_count]

    def rows(self) -> list:
        return [{"kind": k, "all": self.all_count[k], "unique": self.unique_count[k],
                 "eliminated_percent": round(self.eliminated_percent(k), 2)} for k in self.kinds]

    def to_dict(self) -> dict:
        return {
            "per_kind": self.rows(),
            "cluster_of": self.cluster_of,
            "unique_indices": self.unique_indices,
            "epsilon": {"|".join(str(p) for p in key): eps for key, eps in sorted(self.epsilon.items())},
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["kind", "all", "unique", "eliminated_percent"], lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())


def dedup(violations, traces=None, min_pts: int = MIN_PTS) -> DedupReport:
    """Cluster violations per partition key; each cluster and each noise point is one unique violation.

    The representative of a cluster is its member with the earliest
    ``t_first`` (input order breaks ties).
    """
    violations = list(violations)
    report = DedupReport(cluster_of=[NOISE] * len(violations))
    groups = defaultdict(list)
    feats = []
    for i, v in enumerate(violations):
        key, vec = extract_features(v)
        groups[key].append(i)
        feats.append(vec)
        report.all_count[v.kind] = report.all_count.get(v.kind, 0) + 1
        report.unique_count.setdefault(v.kind, 0)
    next_id = 0
    unique = []
    for key in sorted(groups, key=lambda k: tuple(str(p) for p in k)):
        idx = groups[key]
        x = standardize(np.stack([feats[i] for i in idx]))
        if x.shape[1] == 0:
            x = np.zeros((len(idx), 1))
        eps = auto_epsilon(x, min_pts)
        report.epsilon[key] = eps
        labels = dbscan(x, eps, min_pts)
        members = defaultdict(list)
        for i, lab in zip(idx, labels):
            members[("c", lab) if lab != NOISE else ("n", i)].append(i)
        for tag in sorted(members, key=lambda t: min(members[t])):
            group = members[tag]
            for i in group:
                report.cluster_of[i] = next_id
            next_id += 1
            rep = min(group, key=lambda i: (violations[i].t_first, i))
            unique.append(rep)
            report.unique_count[key[0]] += 1
    report.unique_indices = sorted(unique)
    return report
