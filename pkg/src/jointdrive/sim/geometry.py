"""Planar geometry helpers: angle wrapping, frames, polylines, box overlap."""
from __future__ import annotations

import bisect
import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]; values already in range are returned unchanged."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_local(points, origin_xy, origin_heading: float) -> np.ndarray:
    """World points [..., 2] into the frame at ``origin`` (x forward, y left)."""
    p = np.asarray(points, dtype=float) - np.asarray(origin_xy, dtype=float)
    c, s = math.cos(origin_heading), math.sin(origin_heading)
    return np.stack([c * p[..., 0] + s * p[..., 1], -s * p[..., 0] + c * p[..., 1]], axis=-1)


def to_world(points, origin_xy, origin_heading: float) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    c, s = math.cos(origin_heading), math.sin(origin_heading)
    out = np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1]], axis=-1)
    return out + np.asarray(origin_xy, dtype=float)


def box_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    return to_world(local, (x, y), heading)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quads given as [4, 2] corners."""
    for poly in (a, b):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule; ``points`` [N, 2], ``poly`` [K, 2]."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    k = len(poly)
    for i in range(k):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % k]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances from each point [N, 2] to each segment a[K]->b[K].

    Returns ``(dist [N, K], t [N, K])`` with t the clamped segment parameter.
    """
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=2), t


class Polyline:
    """Arc-length parameterized polyline."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2D points")
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9])
        self.points = pts[keep]
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.s[-1])
        self.seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
        self._s_list = self.s.tolist()
        self._heading_list = self.seg_heading.tolist()

    def _seg_index(self, s: float) -> int:
        return min(max(bisect.bisect_right(self._s_list, s) - 1, 0), len(self._heading_list) - 1)

    def point_at(self, s: float) -> np.ndarray:
        """Position at arc length ``s``; extrapolates linearly past either end."""
        i = self._seg_index(s)
        u = (s - self._s_list[i]) / self.seg_len[i]
        return self.points[i] + u * (self.points[i + 1] - self.points[i])

    def points_at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        u = (s - self.s[i]) / self.seg_len[i]
        return self.points[i] + u[..., None] * (self.points[i + 1] - self.points[i])

    def heading_at(self, s: float) -> float:
        return self._heading_list[self._seg_index(s)]

    def project(self, p, s_lo: float = -math.inf, s_hi: float = math.inf) -> tuple[float, float]:
        """Closest arc length (within [s_lo, s_hi] windows of segments) and unsigned distance."""
        lo = 0 if s_lo == -math.inf else max(0, self._seg_index(s_lo))
        hi = len(self.seg_len) if s_hi == math.inf else self._seg_index(s_hi) + 1
        a, b = self.points[lo:hi], self.points[lo + 1: hi + 1]
        d, t = segment_distances(np.asarray(p, dtype=float)[None], a, b)
        k = int(np.argmin(d[0]))
        return float(self.s[lo + k] + t[0, k] * self.seg_len[lo + k]), float(d[0, k])

    def window(self, s0: float, s1: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Segments overlapping [s0, s1]: (start points, end points, start arc lengths)."""
        lo, hi = self._seg_index(s0), self._seg_index(s1) + 1
        return self.points[lo:hi], self.points[lo + 1: hi + 1], self.s[lo:hi]

    def distance(self, points: np.ndarray) -> np.ndarray:
        d, _ = segment_distances(np.asarray(points, dtype=float), self.points[:-1], self.points[1:])
        return d.min(axis=1)
