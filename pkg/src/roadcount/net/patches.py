"""Patch triples around anchors and persisted sample sets.

Patches are NHWC float32: the window is an axis-aligned 48x48 crop; the
subwindow (fixed 12x24 px) and the anchor patch (the anchor box resized to
12x24) are bilinear samples in the anchor frame, length axis along columns.
Out-of-image samples clamp to the nearest edge pixel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..raster import Raster, load_raster, store_raster

WINDOW_SHAPE = (48, 48)
PATCH_SHAPE = (12, 24)


@dataclass
class PatchTriple:
    window: np.ndarray
    subwindow: np.ndarray
    anchor: np.ndarray


@dataclass
class PatchBatch:
    window: np.ndarray     # (N, 48, 48, B)
    subwindow: np.ndarray  # (N, 12, 24, B)
    anchor: np.ndarray     # (N, 12, 24, B)

    def __len__(self):
        return len(self.window)

    def take(self, idx) -> "PatchBatch":
        return PatchBatch(self.window[idx], self.subwindow[idx], self.anchor[idx])

    def triple(self, i: int) -> PatchTriple:
        return PatchTriple(self.window[i], self.subwindow[i], self.anchor[i])

    @classmethod
    def stack(cls, triples) -> "PatchBatch":
        triples = list(triples)
        return cls(np.stack([t.window for t in triples]),
                   np.stack([t.subwindow for t in triples]),
                   np.stack([t.anchor for t in triples]))

    @classmethod
    def concat(cls, batches) -> "PatchBatch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, k) for b in batches])
                     for k in ("window", "subwindow", "anchor")))

    def astype(self, dtype) -> "PatchBatch":
        return PatchBatch(self.window.astype(dtype), self.subwindow.astype(dtype),
                          self.anchor.astype(dtype))


def _image_hwc(img) -> np.ndarray:
    values = img.values if isinstance(img, Raster) else np.asarray(img)
    if values.ndim == 2:
        values = values[np.newaxis]
    return np.ascontiguousarray(np.moveaxis(values, 0, -1))


def bilinear(image_hwc: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``image_hwc`` at fractional pixel coords, clamping to the edges."""
    h, w = image_hwc.shape[:2]
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = image_hwc[y0, x0] * (1 - fx) + image_hwc[y0, x1] * fx
    bottom = image_hwc[y1, x0] * (1 - fx) + image_hwc[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def rotated_grid(cx, cy, angle, length, width, shape=PATCH_SHAPE):
    """Pixel coords of an ``shape`` grid spanning a length x width box.

    Output column j runs along the box length, row i across it.
    """
    h, w = shape
    cx, cy, angle, length, width = (np.asarray(v, dtype=np.float64).reshape(-1, 1, 1)
                                    for v in (cx, cy, angle, length, width))
    u = ((np.arange(w) + 0.5) / w - 0.5)[None, None, :] * length
    v = ((np.arange(h) + 0.5) / h - 0.5)[None, :, None] * width
    c, s = np.cos(angle), np.sin(angle)
    return cx + u * c - v * s, cy + u * s + v * c


def _window_crops(image_hwc, cx, cy):
    h, w = image_hwc.shape[:2]
    wh, ww = WINDOW_SHAPE
    r0 = np.floor(np.asarray(cy) + 0.5).astype(np.intp) - wh // 2
    c0 = np.floor(np.asarray(cx) + 0.5).astype(np.intp) - ww // 2
    rows = np.clip(r0[:, None] + np.arange(wh)[None], 0, h - 1)
    cols = np.clip(c0[:, None] + np.arange(ww)[None], 0, w - 1)
    return image_hwc[rows[:, :, None], cols[:, None, :]]


def extract_patches(img, boxes) -> PatchBatch:
    """Patch triples for a sequence of oriented boxes (or anchors)."""
    boxes = [getattr(b, "box", b) for b in boxes]
    image = _image_hwc(img)
    bands = image.shape[-1]
    if not boxes:
        return PatchBatch(np.zeros((0, *WINDOW_SHAPE, bands), np.float32),
                          np.zeros((0, *PATCH_SHAPE, bands), np.float32),
                          np.zeros((0, *PATCH_SHAPE, bands), np.float32))
    h, w = image.shape[:2]
    cx = np.array([b.cx for b in boxes])
    cy = np.array([b.cy for b in boxes])
    if np.any((cx < -0.5) | (cx > w - 0.5) | (cy < -0.5) | (cy > h - 0.5)):
        raise ValueError("anchor center lies outside the image")
    angle = np.array([b.angle for b in boxes])
    xs, ys = rotated_grid(cx, cy, angle, PATCH_SHAPE[1], PATCH_SHAPE[0])
    sub = bilinear(image, xs, ys)
    xa, ya = rotated_grid(cx, cy, angle, [b.length for b in boxes], [b.width for b in boxes])
    anc = bilinear(image, xa, ya)
    win = _window_crops(image, cx, cy)
    return PatchBatch(win.astype(np.float32), sub.astype(np.float32), anc.astype(np.float32))


def extract_patch_triple(img, anchor) -> PatchTriple:
    return extract_patches(img, [anchor]).triple(0)


def flip_batch(batch: PatchBatch, horizontal: np.ndarray, vertical: np.ndarray) -> PatchBatch:
    """Flip selected samples; the same flips apply to all three patches."""
    out = []
    for arr in (batch.window, batch.subwindow, batch.anchor):
        arr = arr.copy()
        arr[horizontal] = arr[horizontal][:, :, ::-1]
        arr[vertical] = arr[vertical][:, ::-1]
        out.append(arr)
    return PatchBatch(*out)


@dataclass
class SampleSet:
    patches: PatchBatch
    labels: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    image_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1)
        if len(self.labels) != len(self.patches):
            raise ValueError("labels and patches differ in length")
        if not self.image_ids:
            self.image_ids = [""] * len(self.labels)

    def __len__(self):
        return len(self.labels)

    @property
    def n_v(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_n(self) -> int:
        return int(np.sum(self.labels == 0))

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.intp)
        return SampleSet(self.patches.take(idx), self.labels[idx], self.norm_mean,
                         self.norm_std, [self.image_ids[i] for i in idx])

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for key in ("window", "subwindow", "anchor"):
            arr = getattr(self.patches, key)
            n, h, w, b = arr.shape
            stack = np.moveaxis(arr, -1, 1).reshape(n * b, h, w)
            store_raster(Raster(stack if n else np.zeros((b, h, w))), d / f"{key}.grid")
        with open(d / "labels.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["index", "label", "image_id"])
            for i, (lab, img) in enumerate(zip(self.labels, self.image_ids)):
                wr.writerow([i, int(lab), img])
        with open(d / "normalization.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["band", "mean", "std"])
            for b, (m, s) in enumerate(zip(self.norm_mean, self.norm_std)):
                wr.writerow([b, repr(float(m)), repr(float(s))])

    @classmethod
    def load(cls, directory) -> "SampleSet":
        d = Path(directory)
        with open(d / "labels.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        with open(d / "normalization.csv", newline="") as fh:
            norm = list(csv.DictReader(fh))
        mean = np.array([float(r["mean"]) for r in norm], dtype=np.float32)
        std = np.array([float(r["std"]) for r in norm], dtype=np.float32)
        n, bands = len(rows), len(norm)
        parts = []
        for key in ("window", "subwindow", "anchor"):
            stack = load_raster(d / f"{key}.grid").values
            if n == 0:
                stack = stack[:0]
            if stack.shape[0] != n * bands:
                raise ValueError(f"{key}.grid holds {stack.shape[0]} planes, expected {n * bands}")
            parts.append(np.moveaxis(stack.reshape(n, bands, *stack.shape[1:]), 1, -1))
        return cls(PatchBatch(*parts), [int(r["label"]) for r in rows], mean, std,
                   [r["image_id"] for r in rows])
