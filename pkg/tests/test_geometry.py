import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roadcount.geometry import (OrientedBox, clip_convex, convex_hull, intersection_area,
                                min_area_rect, polygon_area)

coords = st.floats(-20, 20, allow_nan=False)
boxes = st.builds(lambda cx, cy, a, b, ang: OrientedBox.normalized(cx, cy, a, b, ang),
                  st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 8), st.floats(0.5, 8),
                  st.floats(0, 2 * math.pi))


def test_box_invariants():
    with pytest.raises(ValueError):
        OrientedBox(0, 0, 1, 2, 0)
    with pytest.raises(ValueError):
        OrientedBox(0, 0, 1, 0, 0)
    assert OrientedBox(0, 0, 2, 1, math.pi + 0.25).angle == pytest.approx(0.25)
    b = OrientedBox.normalized(0, 0, 1, 3, 0.0)
    assert (b.length, b.width) == (3, 1) and b.angle == pytest.approx(math.pi / 2)


def test_corners_and_area():
    b = OrientedBox(1, 2, 4, 2, 0)
    c = b.corners()
    assert sorted(map(tuple, c.round(9))) == [(-1, 1), (-1, 3), (3, 1), (3, 3)]
    assert b.area == 8 == pytest.approx(abs(polygon_area(c)))


def test_convex_hull_square_with_interior():
    pts = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 1], [1, 0]])
    hull = convex_hull(pts)
    assert len(hull) == 4 and polygon_area(hull) == pytest.approx(4)


def _sweep_area(points, step_deg=0.1):
    best = math.inf
    for k in range(int(180 / step_deg)):
        a = math.radians(k * step_deg)
        u = np.array([math.cos(a), math.sin(a)])
        v = np.array([-u[1], u[0]])
        pu, pv = points @ u, points @ v
        best = min(best, (pu.max() - pu.min()) * (pv.max() - pv.min()))
    return best


@given(st.lists(st.tuples(coords, coords), min_size=3, max_size=25))
def test_min_area_rect_vs_angle_sweep(pts):
    pts = np.array(pts, dtype=float)
    cx, cy, length, width, angle = min_area_rect(pts)
    oracle = _sweep_area(pts)
    assert length * width <= oracle * 1.005 + 1e-9
    box_pts = pts - [cx, cy]
    u = np.array([math.cos(angle), math.sin(angle)])
    v = np.array([-u[1], u[0]])
    assert np.all(np.abs(box_pts @ u) <= length / 2 + 1e-6)
    assert np.all(np.abs(box_pts @ v) <= width / 2 + 1e-6)


@given(boxes)
def test_self_intersection_is_area(b):
    assert intersection_area(b, b) == pytest.approx(b.area, rel=1e-9)


@given(boxes, boxes)
def test_intersection_symmetric_and_bounded(a, b):
    ab, ba = intersection_area(a, b), intersection_area(b, a)
    assert ab == pytest.approx(ba, abs=1e-7)
    assert -1e-9 <= ab <= min(a.area, b.area) + 1e-7


def test_intersection_axis_aligned():
    a = OrientedBox(0, 0, 2, 2, 0)
    b = OrientedBox(1, 0, 2, 2, 0)
    assert intersection_area(a, b) == pytest.approx(2)
    assert intersection_area(a, OrientedBox(5, 0, 2, 2, 0)) == 0


@given(boxes, boxes)
def test_intersection_vs_monte_carlo(a, b):
    rng = np.random.default_rng(0)
    lo = np.minimum(a.corners().min(0), b.corners().min(0))
    hi = np.maximum(a.corners().max(0), b.corners().max(0))
    pts = lo + rng.random((20000, 2)) * (hi - lo)
    frac = np.mean(a.contains(pts, 0) & b.contains(pts, 0))
    est = frac * np.prod(hi - lo)
    assert abs(intersection_area(a, b) - est) < 0.05 * np.prod(hi - lo)


def test_clip_convex_disjoint_empty():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert len(clip_convex(sq, sq + 5)) == 0
