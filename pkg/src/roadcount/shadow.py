"""Shadow masks: hue/intensity ratio detection, cleanup, union and erasure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .morph import StructuringElement, binary_close, binary_open
from .raster import Raster


@dataclass
class ShadowMask:
    mask: np.ndarray
    image_id: str = ""


def hue_intensity(red, green, blue, max_value: float | None = None):
    """HSI hue and intensity, both scaled to [0, 1].

    ``max_value`` is the brightness mapped to intensity 1 (defaults to the
    largest RGB value present).  Achromatic pixels get hue 0.
    """
    r, g, b = (np.asarray(c, dtype=np.float64) for c in (red, green, blue))
    if max_value is None:
        max_value = max(float(r.max()), float(g.max()), float(b.max()))
    scale = max_value if max_value > 0 else 1.0
    r, g, b = r / scale, g / scale, b / scale
    intensity = np.clip((r + g + b) / 3.0, 0.0, 1.0)
    num = 0.5 * ((r - g) + (r - b))
    den = np.sqrt((r - g) ** 2 + (r - b) * (g - b))
    cos = np.zeros_like(num)
    np.divide(num, den, out=cos, where=den > 1e-12)
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    hue = np.where(b > g, 2 * np.pi - theta, theta) / (2 * np.pi)
    hue = np.where(den > 1e-12, hue, 0.0)
    return hue, intensity


def shadow_ratio(img: Raster, rgb=(2, 1, 0), max_value: float | None = None) -> np.ndarray:
    if img.bands < max(rgb) + 1 or len(rgb) != 3:
        raise ValueError(f"shadow detection needs RGB bands {rgb}, raster has {img.bands}")
    hue, intensity = hue_intensity(*(img.band(i) for i in rgb), max_value=max_value)
    return (hue + 1.0) / (intensity + 1.0)


def detect_shadow(img: Raster, threshold: float, rgb=(2, 1, 0), image_id: str = "",
                  max_value: float | None = None) -> ShadowMask:
    """Pixels whose (H + 1) / (I + 1) ratio exceeds ``threshold``."""
    return ShadowMask(shadow_ratio(img, rgb, max_value) > threshold, image_id)


def clean_shadow(m: ShadowMask, close_size: int = 3, open_size: int = 7) -> ShadowMask:
    closed = binary_close(m.mask, StructuringElement.square(close_size))
    return ShadowMask(binary_open(closed, StructuringElement.square(open_size)), m.image_id)


def union_masks(masks) -> np.ndarray:
    masks = [getattr(m, "mask", m) for m in masks]
    if not masks:
        raise ValueError("no masks to combine")
    out = np.zeros(np.shape(masks[0]), dtype=bool)
    for m in masks:
        if np.shape(m) != out.shape:
            raise ValueError(f"mask shape {np.shape(m)} differs from {out.shape}")
        out |= np.asarray(m, dtype=bool)
    return out


def center_pixels(dets, shape):
    """Integer (row, col) of detection centers and an in-grid flag."""
    if not dets:
        z = np.zeros(0, dtype=np.intp)
        return z, z, np.zeros(0, dtype=bool)
    cx = np.array([d.box.cx for d in dets])
    cy = np.array([d.box.cy for d in dets])
    rows = np.floor(cy + 0.5).astype(np.intp)
    cols = np.floor(cx + 0.5).astype(np.intp)
    inside = (rows >= 0) & (rows < shape[0]) & (cols >= 0) & (cols < shape[1])
    return rows, cols, inside


def erase_in_shadow(dets, union: np.ndarray) -> list:
    """Drop detections whose center pixel is masked."""
    dets = list(dets)
    rows, cols, inside = center_pixels(dets, union.shape)
    keep = np.ones(len(dets), dtype=bool)
    keep[inside] = ~union[rows[inside], cols[inside]]
    return [d for d, k in zip(dets, keep) if k]
