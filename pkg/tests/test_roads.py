import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roadcount.raster import Raster
from roadcount.roads import (VEHICLE_CLASSES, RoadFormatError, RoadLine, RoadMask, RoadSet,
                             buffer_to_mask, filter_classes, parse_roads, write_roads)


def _template(rows=60, cols=70, res=1.0):
    return Raster(np.zeros((1, rows, cols), np.float32), res, (0.0, rows * res))


def test_parse_single_line(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("primary\tLINESTRING(0 0, 100 0)\n")
    rs = parse_roads(p)
    assert len(rs) == 1 and len(rs.lines[0].vertices) == 2


def test_parse_empty(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("")
    assert len(parse_roads(p)) == 0


@pytest.mark.parametrize("text", ["primary\tLINESTRING(0 0)\n", "primary\tLINESTRING(0 a, 1 1)\n",
                                  "primary\tPOLYGON((0 0, 1 1))\n", "primary LINESTRING(0 0, 1 1)\n"])
def test_parse_errors(tmp_path, text):
    p = tmp_path / "r.txt"
    p.write_text(text)
    with pytest.raises(RoadFormatError):
        parse_roads(p)


def test_unknown_class_flagged(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("spaceway\tLINESTRING(0 0, 1 1)\nprimary\tLINESTRING(0 0, 1 1)\n")
    rs = parse_roads(p)
    assert len(rs) == 2 and [l.highway_class for l in rs.flagged] == ["spaceway"]


def test_roundtrip(tmp_path):
    rs = RoadSet([RoadLine(((0.5, 1.25), (3.0, 4.0), (7.0, 2.0)), "trunk_link")])
    write_roads(rs, tmp_path / "r.txt")
    back = parse_roads(tmp_path / "r.txt")
    np.testing.assert_array_equal(back.lines[0].vertices, rs.lines[0].vertices)
    assert back.lines[0].highway_class == "trunk_link"


def test_filter_classes_examples():
    rs = RoadSet([RoadLine(((0, 0), (1, 0)), "motorway"), RoadLine(((0, 0), (1, 0)), "footway"),
                  RoadLine(((0, 0), (1, 0)), "motorway_link")])
    kept = filter_classes(rs, VEHICLE_CLASSES)
    assert [l.highway_class for l in kept.lines] == ["motorway", "motorway_link"]
    everything = {"motorway", "footway"}
    assert len(filter_classes(rs, everything).lines) == 3


tags = st.sampled_from(["motorway", "primary", "footway", "secondary_link", "path", "trunk"])
road_sets = st.lists(tags, max_size=6).map(
    lambda ts: RoadSet([RoadLine(((0, 0), (1, 1)), t) for t in ts]))


@given(road_sets, road_sets)
def test_filter_idempotent_and_commutes_with_union(a, b):
    once = filter_classes(a)
    assert [l.highway_class for l in filter_classes(once).lines] == \
        [l.highway_class for l in once.lines]
    lhs = filter_classes(a | b)
    rhs = filter_classes(a) | filter_classes(b)
    assert [l.highway_class for l in lhs.lines] == [l.highway_class for l in rhs.lines]


def test_horizontal_stripe_41px():
    t = _template(100, 100)
    # segment at y = 49.5 m hits pixel-center row 50 exactly
    rs = RoadSet([RoadLine(((10.5, 49.5), (80.5, 49.5)), "primary")])
    mask = buffer_to_mask(rs, 20.0, t).mask
    col = mask[:, 45]
    assert col.sum() == 41
    assert np.nonzero(col)[0].min() == 30 and np.nonzero(col)[0].max() == 70


def test_empty_roadset_empty_mask():
    assert not buffer_to_mask(RoadSet([]), 5.0, _template()).mask.any()


def test_mask_requires_positive_distance():
    with pytest.raises(ValueError):
        buffer_to_mask(RoadSet([]), 0.0, _template())
    with pytest.raises(ValueError):
        RoadMask(np.zeros((2, 2), bool), -1.0)


def _oracle(rs, d, t):
    out = np.zeros(t.shape, bool)
    for r in range(t.rows):
        for c in range(t.cols):
            x, y = t.pixel_center(r, c)
            for line in rs.lines:
                v = line.vertices
                for (ax, ay), (bx, by) in zip(v[:-1], v[1:]):
                    dx, dy = bx - ax, by - ay
                    L = dx * dx + dy * dy
                    s = 0.0 if L == 0 else min(1.0, max(0.0, ((x - ax) * dx + (y - ay) * dy) / L))
                    if math.hypot(x - ax - s * dx, y - ay - s * dy) <= d:
                        out[r, c] = True
    return out


pts = st.tuples(st.floats(-5, 45), st.floats(-5, 35))
polylines = st.lists(pts, min_size=2, max_size=4).map(
    lambda vs: RoadLine(tuple(vs), "primary"))


@given(st.lists(polylines, min_size=1, max_size=3), st.floats(0.5, 6))
def test_buffer_vs_bruteforce(lines, d):
    t = _template(30, 40, 1.0)
    rs = RoadSet(lines)
    np.testing.assert_array_equal(buffer_to_mask(rs, d, t).mask, _oracle(rs, d, t))


@given(st.lists(polylines, min_size=1, max_size=3), st.floats(0.5, 4), st.floats(0, 4))
def test_buffer_monotone_and_union(lines, d1, extra):
    t = _template(30, 40, 1.0)
    rs = RoadSet(lines)
    small = buffer_to_mask(rs, d1, t).mask
    big = buffer_to_mask(rs, d1 + extra, t).mask
    assert not (small & ~big).any()
    per_line = np.zeros_like(small)
    for line in lines:
        per_line |= buffer_to_mask(RoadSet([line]), d1, t).mask
    np.testing.assert_array_equal(per_line, small)


def test_buffer_respects_resolution():
    t = _template(40, 40, 2.0)   # 80 m square
    rs = RoadSet([RoadLine(((0.0, 41.0), (80.0, 41.0)), "primary")])
    mask = buffer_to_mask(rs, 10.0, t).mask
    # row centers y = 79, 77, ...; those within 10 m of y = 41 are 31..51
    assert mask[:, 20].sum() == 11
