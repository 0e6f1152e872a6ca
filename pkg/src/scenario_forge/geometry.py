"""Planar geometry shared by the map, the simulator and the oracles.

Oriented rectangles are passed around as parallel arrays (center x/y,
heading, length, width) so that whole traces can be checked in one call.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap radians into (-pi, pi]. Works on scalars and arrays."""
    if np.ndim(a) == 0:
        w = math.fmod(float(a) + math.pi, TWO_PI)
        if w <= 0.0:
            w += TWO_PI
        return w - math.pi
    a = np.asarray(a, dtype=float)
    w = np.fmod(a + math.pi, TWO_PI)
    w = np.where(w <= 0.0, w + TWO_PI, w)
    return w - math.pi


class Polyline:
    """Arc-length parametrised polyline.

    The tangent is interpolated between vertex bisectors so that heading is
    continuous along the line; on a uniformly sampled circle this reproduces
    the analytic tangent at every vertex and every segment midpoint.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-9):
            raise ValueError("polyline has a zero-length segment")
        self.points = pts
        self.seg_len = seg_len
        self.seg_dir = seg / seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum[-1])
        self.cum_list = self.cum.tolist()
        seg_heading = np.arctan2(self.seg_dir[:, 1], self.seg_dir[:, 0])
        self.seg_heading = seg_heading
        # unwrapped heading at each vertex: bisector of adjacent segments
        unwrapped = np.unwrap(seg_heading)
        vh = np.empty(len(pts))
        vh[0] = unwrapped[0]
        vh[-1] = unwrapped[-1]
        if len(pts) > 2:
            vh[1:-1] = 0.5 * (unwrapped[:-1] + unwrapped[1:])
        self._vertex_heading = vh

    def _locate(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        idx = np.searchsorted(self.cum, s, side="right") - 1
        idx = np.clip(idx, 0, len(self.seg_len) - 1)
        return s, idx

    def point_at(self, s):
        s, idx = self._locate(s)
        local = s - self.cum[idx]
        p = self.points[idx] + self.seg_dir[idx] * local[..., None]
        return p

    def heading_at(self, s):
        s, idx = self._locate(s)
        frac = (s - self.cum[idx]) / self.seg_len[idx]
        h = self._vertex_heading[idx] * (1.0 - frac) + self._vertex_heading[idx + 1] * frac
        return wrap_angle(h)

    def normal_at(self, s):
        """Unit normal pointing left of travel."""
        h = self.heading_at(s)
        return np.stack([-np.sin(h), np.cos(h)], axis=-1)

    def project(self, p):
        """Closest point on the polyline to ``p``.

        Returns ``(s, lateral, distance)``; lateral is signed (left positive)
        and equals +/- distance.
        """
        p = np.asarray(p, dtype=float)
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self.seg_dir)
        t = np.clip(t, 0.0, self.seg_len)
        foot = self.points[:-1] + self.seg_dir * t[:, None]
        d = np.hypot(p[0] - foot[:, 0], p[1] - foot[:, 1])
        i = int(np.argmin(d))
        cross = self.seg_dir[i, 0] * rel[i, 1] - self.seg_dir[i, 1] * rel[i, 0]
        dist = float(d[i])
        lateral = dist if cross >= 0.0 else -dist
        return float(self.cum[i] + t[i]), lateral, dist


# --- oriented rectangles -------------------------------------------------------

def rect_corners(cx, cy, heading, length, width):
    """Corners (..., 4, 2) in counter-clockwise order."""
    cx, cy, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (cx, cy, heading, length, width)))
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]])
    lx = local[:, 0] * hl[..., None]
    ly = local[:, 1] * hw[..., None]
    x = cx[..., None] + lx * c[..., None] - ly * s[..., None]
    y = cy[..., None] + lx * s[..., None] + ly * c[..., None]
    return np.stack([x, y], axis=-1)


def _point_segment_dist(p, a, b):
    # p: (..., P, 1, 2), a/b: (..., 1, E, 2)
    ab = b - a
    ap = p - a
    denom = np.einsum("...k,...k->...", ab, ab)
    t = np.clip(np.einsum("...k,...k->...", ap, ab) / denom, 0.0, 1.0)
    foot = a + ab * t[..., None]
    diff = p - foot
    return np.hypot(diff[..., 0], diff[..., 1])


def rect_overlap(ca, cb, ha, hb):
    """Separating-axis overlap test on corner arrays (..., 4, 2).

    Touching counts as overlap.
    """
    axes = np.stack([
        np.stack([np.cos(ha), np.sin(ha)], axis=-1),
        np.stack([-np.sin(ha), np.cos(ha)], axis=-1),
        np.stack([np.cos(hb), np.sin(hb)], axis=-1),
        np.stack([-np.sin(hb), np.cos(hb)], axis=-1),
    ], axis=-2)  # (..., 4, 2)
    pa = np.einsum("...vk,...ak->...av", ca, axes)
    pb = np.einsum("...vk,...ak->...av", cb, axes)
    separated = (pa.max(-1) < pb.min(-1) - 1e-12) | (pb.max(-1) < pa.min(-1) - 1e-12)
    return ~separated.any(-1)


def rect_distance(a, b):
    """Minimum Euclidean distance between oriented rectangles.

    ``a`` and ``b`` are tuples ``(cx, cy, heading, length, width)`` of
    broadcastable arrays. Zero iff the rectangles overlap or touch.
    """
    ha = np.asarray(a[2], dtype=float)
    hb = np.asarray(b[2], dtype=float)
    ca = rect_corners(*a)
    cb = rect_corners(*b)
    ha, hb = np.broadcast_arrays(ha, hb)
    ca, cb = np.broadcast_arrays(ca, cb)
    overlap = rect_overlap(ca, cb, ha, hb)
    ea, eb = np.roll(ca, -1, axis=-2), np.roll(cb, -1, axis=-2)
    d1 = _point_segment_dist(ca[..., :, None, :], cb[..., None, :, :], eb[..., None, :, :])
    d2 = _point_segment_dist(cb[..., :, None, :], ca[..., None, :, :], ea[..., None, :, :])
    d = np.minimum(d1.min(axis=(-1, -2)), d2.min(axis=(-1, -2)))
    return np.where(overlap, 0.0, d)


def clip_convex(subject, clip):
    """Sutherland-Hodgman clipping of convex polygon ``subject`` by ``clip``.

    Both are (n, 2) arrays in counter-clockwise order. May return an empty
    array when the polygons only touch at a point.
    """
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % n]
        edge = b - a

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= -1e-12

        src, out = out, []
        for j, cur in enumerate(src):
            prev = src[j - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(_intersect(prev, cur, a, b))
                out.append(cur)
            elif inside(prev):
                out.append(_intersect(prev, cur, a, b))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def _intersect(p, q, a, b):
    """Intersection of segment p-q with the infinite line a-b."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    r = q - p
    e = b - a
    denom = r[0] * e[1] - r[1] * e[0]
    if abs(denom) < 1e-15:
        return tuple(p)
    t = ((a[0] - p[0]) * e[1] - (a[1] - p[1]) * e[0]) / denom
    return tuple(p + t * r)
