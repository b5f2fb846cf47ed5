"""Planar geometry on pixel coordinates: oriented boxes, hulls, clipping.

Points are ``(x, y)`` with ``x = col`` and ``y = row``; pixel centers sit at
integer coordinates.  Angles are measured from +x toward +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AREA_EPS = 1e-9


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    length: float
    width: float
    angle: float = 0.0

    def __post_init__(self):
        if self.width > self.length:
            raise ValueError(f"length {self.length} must be >= width {self.width}")
        if not self.width > 0:
            raise ValueError("box width must be positive")
        object.__setattr__(self, "angle", float(self.angle) % math.pi)

    @classmethod
    def normalized(cls, cx, cy, extent_a, extent_b, angle):
        """Box with extent_a along ``angle`` and extent_b across it, reordered
        so that length >= width."""
        if extent_b > extent_a:
            return cls(cx, cy, extent_b, extent_a, angle + math.pi / 2)
        return cls(cx, cy, extent_a, extent_b, angle)

    @property
    def center(self) -> tuple[float, float]:
        return self.cx, self.cy

    @property
    def area(self) -> float:
        return self.length * self.width

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([c, s]), np.array([-s, c])

    def corners(self) -> np.ndarray:
        u, v = self.axes
        c = np.array([self.cx, self.cy])
        hl, hw = self.length / 2, self.width / 2
        return np.array([c - hl * u - hw * v, c + hl * u - hw * v,
                         c + hl * u + hw * v, c - hl * u + hw * v])

    def contains(self, points, eps: float = 1e-6) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        u, v = self.axes
        d = points - np.array([self.cx, self.cy])
        return ((np.abs(d @ u) <= self.length / 2 + eps)
                & (np.abs(d @ v) <= self.width / 2 + eps))

    def scaled(self, length_ratio: float, width_ratio: float) -> "OrientedBox":
        return OrientedBox(self.cx, self.cy, self.length * length_ratio,
                           self.width * width_ratio, self.angle)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise, collinear points dropped.

    Degenerate inputs return one or two vertices.
    """
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def polygon_area(poly) -> float:
    """Signed shoelace area (positive when counter-clockwise)."""
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_perimeter(poly) -> float:
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) < 2:
        return 0.0
    return float(np.sum(np.hypot(*(np.roll(poly, -1, axis=0) - poly).T)))


def min_area_rect(points) -> tuple[float, float, float, float, float]:
    """Minimum-area enclosing rectangle of a point set.

    The optimal rectangle has a side collinear with a hull edge, so each
    hull edge direction is tried as a caliper orientation.  Returns
    ``(cx, cy, length, width, angle)`` with ``length >= width`` (both may be
    zero for degenerate sets) and ``angle`` along the length axis in
    ``[0, pi)``.
    """
    hull = convex_hull(points)
    if len(hull) == 0:
        raise ValueError("empty point set")
    if len(hull) == 1:
        return float(hull[0, 0]), float(hull[0, 1]), 0.0, 0.0, 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2)
    angles = np.unique(np.round(angles, 12))
    best = None
    for theta in angles:
        u = np.array([math.cos(theta), math.sin(theta)])
        v = np.array([-math.sin(theta), math.cos(theta)])
        pu, pv = hull @ u, hull @ v
        eu, ev = pu.max() - pu.min(), pv.max() - pv.min()
        area = eu * ev
        if best is None or area < best[0] - AREA_EPS:
            mid = u * (pu.max() + pu.min()) / 2 + v * (pv.max() + pv.min()) / 2
            best = (area, mid, eu, ev, theta)
    _, mid, eu, ev, theta = best
    if ev > eu:
        eu, ev, theta = ev, eu, theta + math.pi / 2
    return float(mid[0]), float(mid[1]), float(eu), float(ev), float(theta % math.pi)


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of convex polygons (both counter-clockwise)."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % n]
        inputs, output = output, []
        prev = inputs[-1]
        prev_in = _cross(a, b, prev) >= 0
        for cur in inputs:
            cur_in = _cross(a, b, cur) >= 0
            if cur_in != prev_in:
                # segment prev->cur crosses the clip line
                d1, d2 = _cross(a, b, prev), _cross(a, b, cur)
                t = d1 / (d1 - d2)
                output.append((prev[0] + t * (cur[0] - prev[0]),
                               prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _ccw(poly):
    return poly if polygon_area(poly) >= 0 else poly[::-1]


def intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    ra = math.hypot(a.length, a.width) / 2
    rb = math.hypot(b.length, b.width) / 2
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    inter = clip_convex(_ccw(a.corners()), _ccw(b.corners()))
    area = abs(polygon_area(inter))
    return area if area > AREA_EPS else 0.0
