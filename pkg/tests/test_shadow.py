import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from roadcount.geometry import OrientedBox
from roadcount.morph import StructuringElement, binary_open
from roadcount.nms import Detection
from roadcount.raster import Raster
from roadcount.shadow import (ShadowMask, clean_shadow, detect_shadow, erase_in_shadow,
                              hue_intensity, shadow_ratio, union_masks)


def _det(cx, cy, i=0):
    return Detection(OrientedBox(cx, cy, 5, 2, 0), 0.8, id=i)


def test_white_image_never_shadow():
    img = Raster(np.ones((3, 8, 8), np.float32))
    for t in (1.01, 1.5, 3.0):
        assert not detect_shadow(img, t, rgb=(0, 1, 2)).mask.any()


def test_dark_region_flagged():
    values = np.empty((4, 20, 20), np.float32)
    values[:] = np.array([0.2, 0.22, 0.25, 0.3])[:, None, None]        # sunlit road
    values[:, 5:12, 3:9] = np.array([0.05, 0.045, 0.04, 0.05])[:, None, None]
    img = Raster(values)
    ratio = shadow_ratio(img, max_value=0.3)
    lit, dark = ratio[0, 0], ratio[6, 6]
    assert dark > lit
    m = detect_shadow(img, (lit + dark) / 2, max_value=0.3).mask
    expect = np.zeros((20, 20), bool)
    expect[5:12, 3:9] = True
    np.testing.assert_array_equal(m, expect)
    assert not detect_shadow(img, ratio.max(), max_value=0.3).mask.any()


def test_missing_bands():
    with pytest.raises(ValueError):
        detect_shadow(Raster(np.zeros((2, 4, 4))), 1.2)


def test_hue_intensity_range(rng):
    r, g, b = rng.random((3, 10, 10))
    h, i = hue_intensity(r, g, b)
    assert (h >= 0).all() and (h <= 1).all() and (i >= 0).all() and (i <= 1).all()
    h, _ = hue_intensity(np.array([1.0]), np.array([0.0]), np.array([0.0]))
    assert h[0] == pytest.approx(0)
    h, _ = hue_intensity(np.array([0.0]), np.array([1.0]), np.array([0.0]))
    assert h[0] == pytest.approx(1 / 3)


def _open_oracle(m, k):
    """Naive binary opening with a k x k square, structure kept inside the grid."""
    h, w = m.shape
    r = k // 2
    eroded = np.zeros_like(m)
    for i, j in itertools.product(range(h), range(w)):
        win = m[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1]
        full = (i - r >= 0 and j - r >= 0 and i + r < h and j + r < w)
        eroded[i, j] = full and win.all()
    out = np.zeros_like(m)
    for i, j in zip(*np.nonzero(eroded)):
        out[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1] = True
    return out


def test_clean_examples():
    m = np.zeros((30, 30), bool)
    m[15, 15] = True
    assert not clean_shadow(ShadowMask(m)).mask.any()
    block = np.zeros((30, 30), bool)
    block[8:19, 8:19] = True
    out = clean_shadow(ShadowMask(block)).mask
    np.testing.assert_array_equal(out, block)
    assert not clean_shadow(ShadowMask(np.zeros((9, 9), bool))).mask.any()


def test_open_matches_oracle(rng):
    m = rng.random((25, 25)) < 0.7
    np.testing.assert_array_equal(binary_open(m, StructuringElement.square(7)), _open_oracle(m, 7))


@given(arrays(bool, (16, 16)))
def test_clean_final_opening_idempotent(m):
    out = clean_shadow(ShadowMask(m)).mask
    np.testing.assert_array_equal(binary_open(out, StructuringElement.square(7)), out)


@given(arrays(bool, (6, 6)), arrays(bool, (6, 6)))
def test_union_laws(a, b):
    np.testing.assert_array_equal(union_masks([a]), a)
    np.testing.assert_array_equal(union_masks([a, np.zeros_like(a)]), a)
    u = union_masks([ShadowMask(a), b])
    assert (u >= a).all() and (u >= b).all()


def test_union_errors():
    with pytest.raises(ValueError):
        union_masks([np.zeros((2, 2), bool), np.zeros((3, 2), bool)])
    with pytest.raises(ValueError):
        union_masks([])


def test_erase_examples():
    dets = [_det(2, 3, 0), _det(7.4, 1.6, 1)]
    empty = np.zeros((10, 10), bool)
    assert erase_in_shadow(dets, empty) == dets
    m = empty.copy()
    m[3, 2] = True
    assert erase_in_shadow(dets, m) == [dets[1]]
    assert erase_in_shadow(dets, np.ones_like(m)) == []


@given(arrays(bool, (10, 10)), arrays(bool, (10, 10)),
       st.lists(st.tuples(st.floats(0, 9), st.floats(0, 9)), max_size=15))
def test_erase_monotone_and_common_area(a, b, centers):
    dets = [_det(x, y, i) for i, (x, y) in enumerate(centers)]
    small, big = erase_in_shadow(dets, a), erase_in_shadow(dets, a | b)
    assert set(big) <= set(small)
    # every survivor sits in the complement of the union, whatever the epoch
    for d in big:
        assert not (a | b)[int(np.floor(d.box.cy + 0.5)), int(np.floor(d.box.cx + 0.5))]
