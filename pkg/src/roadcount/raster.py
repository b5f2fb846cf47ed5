"""Pixel grids, band arithmetic, binary masks and raster file I/O.

A :class:`Raster` stores its values band-major as a ``(bands, rows, cols)``
float32 array.  Binary masks are plain boolean ``(rows, cols)`` arrays; the
functions here check shapes but do not wrap them.

Pixel ``(row, col)`` has its center at
``origin + ((col + 0.5) * res, -(row + 0.5) * res)`` in the meter frame.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRID_MAGIC = "GRID1"


class RasterFormatError(ValueError):
    """Raised for malformed or truncated raster files."""


@dataclass
class Raster:
    values: np.ndarray
    resolution: float = 1.0
    origin: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[np.newaxis]
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"raster values must be (bands, rows, cols), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("raster values must be finite")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.values = np.ascontiguousarray(values)
        self.resolution = float(self.resolution)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def band(self, index: int) -> np.ndarray:
        return self.values[index]

    def pixel_center(self, row, col):
        """Meter-frame coordinates of pixel centers (broadcasts over arrays)."""
        x = self.origin[0] + (np.asarray(col) + 0.5) * self.resolution
        y = self.origin[1] - (np.asarray(row) + 0.5) * self.resolution
        return x, y

    def world_to_pixel(self, x, y):
        """Fractional (row, col) of meter-frame points, pixel centers at integers."""
        col = (np.asarray(x) - self.origin[0]) / self.resolution - 0.5
        row = (self.origin[1] - np.asarray(y)) / self.resolution - 0.5
        return row, col

    def like(self, values) -> "Raster":
        """New raster on the same grid."""
        return Raster(values, self.resolution, self.origin)


def _read_pgm(data: bytes) -> Raster:
    tokens = []
    pos = 2
    while len(tokens) < 3:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if m is None:
            raise RasterFormatError("malformed PGM header")
        tokens.append(int(m.group(2)))
        pos = m.end()
    cols, rows, maxval = tokens
    pos += 1  # single whitespace byte after maxval
    if rows < 1 or cols < 1 or not 0 < maxval < 65536:
        raise RasterFormatError("bad PGM dimensions")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    expected = rows * cols * dtype.itemsize
    payload = data[pos:]
    if len(payload) != expected:
        raise RasterFormatError(f"PGM payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    return Raster(values.astype(np.float32))


def load_raster(path) -> Raster:
    """Read a GRID file or a binary (P5) PGM."""
    data = Path(path).read_bytes()
    if data.startswith(b"P5"):
        return _read_pgm(data)
    newline = data.find(b"\n")
    if not data.startswith(GRID_MAGIC.encode()) or newline < 0:
        raise RasterFormatError(f"{path}: not a GRID1 or P5 file")
    parts = data[:newline].decode("ascii", errors="replace").split()
    if len(parts) != 7:
        raise RasterFormatError(f"{path}: GRID header needs 6 fields, got {len(parts) - 1}")
    try:
        rows, cols, bands = (int(p) for p in parts[1:4])
        resolution, ox, oy = (float(p) for p in parts[4:7])
    except ValueError as exc:
        raise RasterFormatError(f"{path}: malformed GRID header") from exc
    if rows < 1 or cols < 1 or bands < 1:
        raise RasterFormatError(f"{path}: non-positive dimensions")
    payload = data[newline + 1:]
    expected = rows * cols * bands * 4
    if len(payload) != expected:
        raise RasterFormatError(
            f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(bands, rows, cols)
    if not np.all(np.isfinite(values)):
        raise RasterFormatError(f"{path}: non-finite values")
    try:
        return Raster(values.astype(np.float32), resolution, (ox, oy))
    except ValueError as exc:
        raise RasterFormatError(f"{path}: {exc}") from exc


def store_raster(raster: Raster, path) -> None:
    header = (f"{GRID_MAGIC} {raster.rows} {raster.cols} {raster.bands} "
              f"{raster.resolution!r} {raster.origin[0]!r} {raster.origin[1]!r}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(raster.values.astype("<f4").tobytes())


def write_pgm(values: np.ndarray, path, maxval: int = 255) -> None:
    values = np.asarray(values)
    rows, cols = values.shape
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode("ascii"))
        fh.write(np.clip(values, 0, maxval).astype(dtype).tobytes())


def _check_same_shape(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def ndvi(red: np.ndarray, nir: np.ndarray) -> np.ndarray:
    """(nir - red) / (nir + red), zero where the sum vanishes."""
    _check_same_shape(red, nir, "red and nir bands")
    red = np.asarray(red, dtype=np.float64)
    nir = np.asarray(nir, dtype=np.float64)
    total = nir + red
    out = np.zeros_like(total)
    np.divide(nir - red, total, out=out, where=total != 0)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def threshold(band: np.ndarray, t: float, direction: str = "above") -> np.ndarray:
    band = np.asarray(band)
    if band.ndim != 2:
        raise ValueError("threshold expects a single band")
    if direction == "above":
        return band > t
    if direction == "below":
        return band < t
    raise ValueError(f"direction must be 'above' or 'below', not {direction!r}")


def otsu_threshold(band: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Otsu threshold over the (optionally masked) pixels of a band."""
    from skimage.filters import threshold_otsu

    values = np.asarray(band)[mask] if mask is not None else np.asarray(band).ravel()
    if values.size == 0 or np.all(values == values.flat[0]):
        return float(values.flat[0]) if values.size else 0.0
    return float(threshold_otsu(values))


def l2_fuse(responses) -> np.ndarray:
    """Per-pixel Euclidean norm across bands of a ``(bands, rows, cols)`` stack."""
    values = responses.values if isinstance(responses, Raster) else np.asarray(responses)
    if values.ndim == 2:
        values = values[np.newaxis]
    values = values.astype(np.float64)
    return np.sqrt(np.sum(values * values, axis=0)).astype(np.float32)


def apply_mask(r: np.ndarray, m: np.ndarray, mode: str = "and") -> np.ndarray:
    _check_same_shape(r, m, "masks")
    r = np.asarray(r, dtype=bool)
    m = np.asarray(m, dtype=bool)
    if mode == "and":
        return r & m
    if mode == "and_not":
        return r & ~m
    raise ValueError(f"mode must be 'and' or 'and_not', not {mode!r}")
