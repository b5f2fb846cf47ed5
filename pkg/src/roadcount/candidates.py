"""Vehicle candidates from bright/dark binary maps.

Connected pixel clusters become :class:`CandidateObject` instances carrying
their oriented minimum bounding rectangle and compactness metrics; shadow
clusters hugging bright objects are discarded, implausible shapes are
filtered out and the survivors spawn oriented anchors for classification.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .geometry import OrientedBox, convex_hull, min_area_rect, polygon_area

EIGHT = np.ones((3, 3), dtype=bool)
_EDGE_MIDPOINTS = np.array([[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]])


@dataclass(frozen=True)
class ShapeRules:
    min_area: float = 2        # exclusive
    max_area: float = 200      # exclusive
    max_length: float = 28
    max_width: float = 9
    max_elongation: float = 8  # length / width
    min_hull_fill: float = 0.9
    min_box_fill: float = 0.55

    def box_violation(self, length: float, width: float) -> str | None:
        """Length/width/elongation check shared with NMS pre-filtering."""
        if not length < self.max_length:
            return "length"
        if not width < self.max_width:
            return "width"
        if not length / width < self.max_elongation:
            return "elongation"
        return None


class Verdict(NamedTuple):
    passed: bool
    reason: str | None = None


@dataclass(eq=False)
class CandidateObject:
    pixels: np.ndarray            # (n, 2) integer (row, col)
    polarity: str = "bright"
    id: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        if len(self.pixels) == 0:
            raise ValueError("candidate object needs at least one pixel")

    @property
    def area(self) -> int:
        return len(self.pixels)

    @cached_property
    def points(self) -> np.ndarray:
        """Pixel centers as (x, y)."""
        return self.pixels[:, ::-1].astype(np.float64)

    @cached_property
    def mbr(self) -> OrientedBox:
        return min_bounding_rect(self.pixels)

    @property
    def length(self) -> float:
        return self.mbr.length

    @property
    def width(self) -> float:
        return self.mbr.width

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.length

    @property
    def elongation(self) -> float:
        return self.length / self.width

    @cached_property
    def hull_fill(self) -> float:
        # hull of the pixels' edge midpoints, i.e. of the marching-squares
        # outline; a solid rectangle loses only its four corner triangles
        outline = (self.points[:, None, :] + _EDGE_MIDPOINTS).reshape(-1, 2)
        return min(1.0, self.area / abs(polygon_area(convex_hull(outline))))

    @cached_property
    def box_fill(self) -> float:
        return min(1.0, self.area / self.mbr.area)

    @cached_property
    def boundary(self) -> np.ndarray:
        """Pixels with at least one 8-neighbour outside the object."""
        local, (r0, c0) = self._local_mask(pad=1)
        interior = ndimage.binary_erosion(local, EIGHT, border_value=0)
        rr, cc = np.nonzero(local & ~interior)
        return np.stack([rr + r0, cc + c0], axis=1)

    def _local_mask(self, pad: int):
        r0, c0 = self.pixels.min(axis=0) - pad
        r1, c1 = self.pixels.max(axis=0) + pad + 1
        local = np.zeros((r1 - r0, c1 - c0), dtype=bool)
        local[self.pixels[:, 0] - r0, self.pixels[:, 1] - c0] = True
        return local, (r0, c0)


def min_bounding_rect(pixels) -> OrientedBox:
    """Minimum-area rectangle around pixel centers, grown by half a pixel."""
    pixels = np.asarray(pixels).reshape(-1, 2)
    if len(pixels) == 0:
        raise ValueError("empty pixel set")
    cx, cy, length, width, angle = min_area_rect(pixels[:, ::-1])
    return OrientedBox(cx, cy, length + 1.0, width + 1.0, angle)


def connected_components(mask: np.ndarray, polarity: str = "bright",
                         start_id: int = 0) -> list[CandidateObject]:
    """8-connected components in raster-scan order of first pixel."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    bounds = np.cumsum(counts)
    cols = labels.shape[1]
    objects = []
    for k in range(1, n + 1):
        idx = order[bounds[k - 1]:bounds[k]]
        pixels = np.stack(np.divmod(idx, cols), axis=1)
        objects.append(CandidateObject(pixels, polarity, start_id + k - 1))
    return objects


def looks_like_vehicle(obj: CandidateObject, rules: ShapeRules = ShapeRules()) -> bool:
    """Retention test for dark objects that touch bright ones."""
    return (obj.box_fill >= 0.7 and obj.hull_fill >= 0.9
            and obj.length < rules.max_length and obj.width < rules.max_width)


def adjacency_fraction(obj: CandidateObject, bright_mask: np.ndarray) -> float:
    """Share of ``obj``'s boundary pixels with a bright pixel among their 8 neighbours."""
    boundary = obj.boundary
    rows, cols = bright_mask.shape
    hits = np.zeros(len(boundary), dtype=bool)
    for dr, dc in itertools.product((-1, 0, 1), repeat=2):
        if dr == 0 and dc == 0:
            continue
        r, c = boundary[:, 0] + dr, boundary[:, 1] + dc
        ok = (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
        hits[ok] |= bright_mask[r[ok], c[ok]]
    return float(hits.mean())


def remove_shadow_adjacent(dark, bright, adjacency_threshold: float = 0.30,
                           shape=None, rules: ShapeRules = ShapeRules()):
    """Drop dark objects that mostly border bright ones unless vehicle-shaped."""
    dark, bright = list(dark), list(bright)
    if not dark or not bright:
        return dark
    if shape is None:
        extent = np.concatenate([o.pixels for o in dark + bright]).max(axis=0) + 2
        shape = tuple(int(v) for v in extent)
    bright_mask = np.zeros(shape, dtype=bool)
    for o in bright:
        bright_mask[o.pixels[:, 0], o.pixels[:, 1]] = True
    kept = []
    for obj in dark:
        if (adjacency_fraction(obj, bright_mask) >= adjacency_threshold
                and not looks_like_vehicle(obj, rules)):
            continue
        kept.append(obj)
    return kept


def shape_filter(obj: CandidateObject, rules: ShapeRules = ShapeRules()) -> Verdict:
    if not rules.min_area < obj.area < rules.max_area:
        return Verdict(False, "area")
    reason = rules.box_violation(obj.length, obj.width)
    if reason:
        return Verdict(False, reason)
    if not obj.hull_fill > rules.min_hull_fill:
        return Verdict(False, "hull_fill")
    if not obj.box_fill > rules.min_box_fill:
        return Verdict(False, "box_fill")
    return Verdict(True)


@dataclass(frozen=True)
class AnchorConfig:
    zoom_length: tuple[float, ...] = (1.0, 1.5, 2.0)
    zoom_width: tuple[float, ...] = (1.0, 1.25, 1.5)
    square_aspect: float = 0.6


@dataclass(frozen=True)
class Anchor:
    box: OrientedBox
    object_id: int
    zoom: tuple[float, float] = (1.0, 1.0)
    direction: str = "primary"
    polarity: str = field(default="bright", compare=False)


def generate_anchors(obj: CandidateObject, cfg: AnchorConfig = AnchorConfig()) -> list[Anchor]:
    """Zoomed boxes around the object's MBR.

    Objects with ``aspect_ratio > square_aspect`` keep their direction (9
    anchors); the rest also get the perpendicular family (18 anchors).
    """
    mbr = obj.mbr
    directions = [("primary", mbr.angle)]
    if obj.aspect_ratio <= cfg.square_aspect:
        directions.append(("perpendicular", mbr.angle + math.pi / 2))
    anchors = []
    for direction, angle in directions:
        for lr in cfg.zoom_length:
            for wr in cfg.zoom_width:
                box = OrientedBox.normalized(mbr.cx, mbr.cy, mbr.length * lr,
                                             mbr.width * wr, angle)
                anchors.append(Anchor(box, obj.id, (lr, wr), direction, obj.polarity))
    return anchors


CANDIDATE_FIELDS = ["id", "polarity", "area", "cx", "cy", "length", "width",
                    "angle_deg", "hull_fill", "box_fill"]


def write_candidates(objects, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANDIDATE_FIELDS)
        for o in objects:
            b = o.mbr
            w.writerow([o.id, o.polarity, o.area, f"{b.cx:.4f}", f"{b.cy:.4f}",
                        f"{b.length:.4f}", f"{b.width:.4f}",
                        f"{math.degrees(b.angle):.4f}", f"{o.hull_fill:.4f}",
                        f"{o.box_fill:.4f}"])
