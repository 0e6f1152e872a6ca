"""Rank statistics for comparing runs: Mann-Whitney U and the Vargha-Delaney A12."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 12


def _check(xs, ys):
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size == 0 or ys.size == 0:
        raise ValueError("samples must be non-empty")
    return xs, ys


def rank_sum_distribution(ranks, n1: int) -> dict:
    """Exact null distribution of the sum of ``n1`` of the given (mid)ranks.

    Keys are doubled rank sums (integers, so midranks stay exact); values are
    probabilities.
    """
    doubled = np.rint(2 * np.asarray(ranks)).astype(int)
    top = int(doubled.sum())
    # ways[j, s]: subsets of size j with doubled sum s
    ways = np.zeros((n1 + 1, top + 1))
    ways[0, 0] = 1.0
    for r in doubled:
        ways[1:, r:] += ways[:-1, :top + 1 - r].copy()
    total = ways[n1].sum()
    return {s: ways[n1, s] / total for s in np.flatnonzero(ways[n1])}


def mann_whitney_u(xs, ys) -> float:
    """Two-sided p-value of the Mann-Whitney U test.

    Exact (tie-aware enumeration of rank sums) when both samples have at most
    12 values, otherwise the normal approximation with tie and continuity
    corrections.
    """
    xs, ys = _check(xs, ys)
    n1, n2 = xs.size, ys.size
    ranks = rankdata(np.concatenate([xs, ys]))
    w = ranks[:n1].sum()
    if max(n1, n2) <= EXACT_MAX_N:
        dist = rank_sum_distribution(ranks, n1)
        mean2 = n1 * (n1 + n2 + 1)  # doubled expectation of the rank sum
        dev = abs(2 * w - mean2)
        p = sum(prob for s, prob in dist.items() if abs(s - mean2) >= dev - 1e-9)
        return float(min(p, 1.0))
    n = n1 + n2
    u = w - n1 * (n1 + 1) / 2.0
    mu = n1 * n2 / 2.0
    _, counts = np.unique(ranks, return_counts=True)
    tie = float((counts ** 3 - counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return float(min(2.0 * norm.sf(z), 1.0))


def vargha_delaney_a12(xs, ys) -> float:
    """Probability that a value drawn from ``xs`` beats one from ``ys`` (ties count half)."""
    xs, ys = _check(xs, ys)
    diff = xs[:, None] - ys[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (xs.size * ys.size))
