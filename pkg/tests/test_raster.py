import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from roadcount.raster import (Raster, RasterFormatError, apply_mask, l2_fuse, load_raster,
                              ndvi, otsu_threshold, store_raster, threshold, write_pgm)

finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


def test_grid_2x2_payload(tmp_path):
    path = tmp_path / "a.grid"
    path.write_bytes(b"GRID1 2 2 1 1.0 0.0 0.0\n" + np.arange(4, dtype="<f4").tobytes())
    r = load_raster(path)
    assert (r.rows, r.cols, r.bands) == (2, 2, 1)
    np.testing.assert_array_equal(r.band(0), [[0, 1], [2, 3]])


@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6)),
              elements=finite32),
       st.floats(0.1, 10), st.floats(-1e5, 1e5), st.floats(-1e5, 1e5))
def test_store_load_bit_identical(tmp_path_factory, values, res, ox, oy):
    path = tmp_path_factory.mktemp("r") / "x.grid"
    r = Raster(values, res, (ox, oy))
    store_raster(r, path)
    back = load_raster(path)
    assert back.values.tobytes() == r.values.tobytes()
    assert back.resolution == r.resolution and back.origin == r.origin


def test_header_layout_band_major(tmp_path):
    v = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
    store_raster(Raster(v, 0.5, (10.0, 20.0)), tmp_path / "b.grid")
    data = (tmp_path / "b.grid").read_bytes()
    header, payload = data.split(b"\n", 1)
    assert header.split()[:4] == [b"GRID1", b"2", b"2", b"3"]
    np.testing.assert_array_equal(np.frombuffer(payload, "<f4"), np.arange(12))


@pytest.mark.parametrize("content", [
    b"GRID1 2 2 1 1.0 0.0 0.0\n" + np.zeros(3, "<f4").tobytes(),      # truncated
    b"GRID1 2 2 1 1.0 0.0 0.0\n" + np.zeros(5, "<f4").tobytes(),      # too long
    b"GRID1 2 x 1 1.0 0.0 0.0\n" + np.zeros(4, "<f4").tobytes(),      # bad header
    b"GRID1 2 2 1 -1.0 0.0 0.0\n" + np.zeros(4, "<f4").tobytes(),     # resolution
    b"NOPE\n",
])
def test_malformed_files_rejected(tmp_path, content):
    path = tmp_path / "bad.grid"
    path.write_bytes(content)
    with pytest.raises(RasterFormatError):
        load_raster(path)


def test_nan_rejected_at_load(tmp_path):
    path = tmp_path / "nan.grid"
    path.write_bytes(b"GRID1 1 2 1 1.0 0.0 0.0\n" + np.array([0, np.nan], "<f4").tobytes())
    with pytest.raises(RasterFormatError):
        load_raster(path)


def test_pgm_import(tmp_path):
    img = np.array([[0, 128], [255, 7]])
    write_pgm(img, tmp_path / "m.pgm")
    r = load_raster(tmp_path / "m.pgm")
    assert r.bands == 1
    np.testing.assert_array_equal(r.band(0), img)


def test_pixel_center_convention():
    r = Raster(np.zeros((1, 4, 5)), 2.0, (100.0, 50.0))
    assert r.pixel_center(0, 0) == (101.0, 49.0)
    row, col = r.world_to_pixel(*r.pixel_center(3, 4))
    assert (row, col) == (3.0, 4.0)


def test_ndvi_examples():
    assert np.all(ndvi(np.full((2, 2), 0.3), np.full((2, 2), 0.3)) == 0)
    assert ndvi(np.array([0.2]), np.array([0.6]))[0] == pytest.approx(0.5)
    assert ndvi(np.array([0.4]), np.array([0.0]))[0] == -1
    assert ndvi(np.array([0.0]), np.array([0.0]))[0] == 0
    with pytest.raises(ValueError):
        ndvi(np.zeros((2, 2)), np.zeros((2, 3)))


@given(arrays(np.float32, (5, 5), elements=st.floats(0, 10, width=32)),
       arrays(np.float32, (5, 5), elements=st.floats(0, 10, width=32)))
def test_ndvi_range(red, nir):
    v = ndvi(red, nir)
    assert np.all((v >= -1) & (v <= 1))


def test_threshold_strict_and_oracle(rng):
    assert not threshold(np.full((3, 3), 2.0), 2.0, "above").any()
    assert not threshold(np.full((3, 3), 2.0), 2.0, "below").any()
    band = rng.random((8, 9))
    assert threshold(band, band.min() - 1, "above").all()
    t = 0.5
    oracle = np.array([[band[i, j] > t for j in range(9)] for i in range(8)])
    np.testing.assert_array_equal(threshold(band, t, "above"), oracle)
    oracle = np.array([[band[i, j] < t for j in range(9)] for i in range(8)])
    np.testing.assert_array_equal(threshold(band, t, "below"), oracle)
    with pytest.raises(ValueError):
        threshold(band, t, "sideways")


@given(arrays(np.float32, (6, 6), elements=st.floats(0, 100, width=32)),
       st.floats(0, 100), st.floats(0.5, 8))
def test_threshold_scaling_invariance(band, t, k):
    # scale both raster and threshold (powers of two keep float32 arithmetic exact)
    k = 2.0 ** round(np.log2(k))
    np.testing.assert_array_equal(threshold(band, t, "above"),
                                  threshold(band * np.float32(k), t * k, "above"))


def test_l2_fuse_examples():
    assert l2_fuse(np.array([[[3.0]], [[4.0]]]))[0, 0] == 5
    assert np.all(l2_fuse(np.zeros((3, 2, 2))) == 0)
    np.testing.assert_array_equal(l2_fuse(np.array([[[-2.0, 3.0]]])), [[2.0, 3.0]])


@given(arrays(np.float32, (4, 3, 3), elements=st.floats(-10, 10, width=32)), st.permutations(range(4)))
def test_l2_fuse_band_permutation(v, perm):
    np.testing.assert_allclose(l2_fuse(v), l2_fuse(v[list(perm)]), rtol=1e-6)


@given(arrays(bool, (5, 5)), arrays(bool, (5, 5)))
def test_apply_mask_laws(r, m):
    empty, full = np.zeros_like(r), np.ones_like(r)
    np.testing.assert_array_equal(apply_mask(r, empty, "and_not"), r)
    assert not apply_mask(r, full, "and_not").any()
    np.testing.assert_array_equal(apply_mask(r, r, "and"), r)
    np.testing.assert_array_equal(apply_mask(r, m, "and"), r & m)


def test_apply_mask_shape_mismatch():
    with pytest.raises(ValueError):
        apply_mask(np.zeros((2, 2), bool), np.zeros((3, 2), bool))


def test_otsu_separates_two_modes(rng):
    band = np.concatenate([rng.normal(0.1, 0.01, 500), rng.normal(0.9, 0.01, 500)])
    t = otsu_threshold(band.reshape(20, 50))
    assert band[:500].max() <= t < band[500:].min()
    mask = np.zeros(1000, bool)
    mask[:500] = True
    mask[:5] = False
    # only the low mode is visible through the mask
    assert otsu_threshold(band.reshape(20, 50), mask.reshape(20, 50)) < band[500:].min()
