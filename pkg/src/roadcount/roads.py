"""Road centerlines: parsing, class selection and buffered road masks."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import Raster

# Observable highway classes used for vehicle extraction; "_link" variants
# are accepted through filter_classes.
VEHICLE_CLASSES = frozenset(
    {"motorway", "primary", "secondary", "tertiary", "trunk", "unclassified"})

# OSM highway values recognised by the parser; anything else is flagged.
KNOWN_CLASSES = VEHICLE_CLASSES | frozenset({
    "residential", "service", "living_street", "pedestrian", "track", "road",
    "footway", "cycleway", "path", "steps", "bridleway", "busway",
})

_RECORD = re.compile(r"^\s*([^\t]+?)\s*\t\s*LINESTRING\s*\((.*)\)\s*$", re.IGNORECASE)


class RoadFormatError(ValueError):
    pass


def base_class(tag: str) -> str:
    return tag[:-5] if tag.endswith("_link") else tag


@dataclass
class RoadLine:
    vertices: np.ndarray
    highway_class: str

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(self.vertices) < 2:
            raise ValueError("a road line needs at least 2 vertices")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("road coordinates must be finite")

    @property
    def known(self) -> bool:
        return base_class(self.highway_class) in KNOWN_CLASSES

    def segments(self) -> np.ndarray:
        return np.stack([self.vertices[:-1], self.vertices[1:]], axis=1)


@dataclass
class RoadSet:
    lines: list[RoadLine] = field(default_factory=list)
    class_allowlist: frozenset = VEHICLE_CLASSES

    def __len__(self):
        return len(self.lines)

    @property
    def flagged(self) -> list[RoadLine]:
        """Lines whose class is not a recognised highway tag."""
        return [ln for ln in self.lines if not ln.known]

    def __or__(self, other: "RoadSet") -> "RoadSet":
        return RoadSet(self.lines + other.lines, self.class_allowlist | other.class_allowlist)


@dataclass
class RoadMask:
    mask: np.ndarray
    distance: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("buffer distance must be positive")


def parse_roads(path) -> RoadSet:
    lines = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, record in enumerate(text.splitlines(), 1):
        if not record.strip() or record.lstrip().startswith("#"):
            continue
        m = _RECORD.match(record)
        if m is None:
            raise RoadFormatError(f"{path}:{lineno}: expected 'class<TAB>LINESTRING(...)'")
        tag, body = m.group(1), m.group(2)
        coords = []
        for pair in body.split(","):
            parts = pair.split()
            if len(parts) != 2:
                raise RoadFormatError(f"{path}:{lineno}: bad coordinate pair {pair.strip()!r}")
            try:
                coords.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise RoadFormatError(f"{path}:{lineno}: non-numeric coordinate") from exc
        try:
            lines.append(RoadLine(coords, tag))
        except ValueError as exc:
            raise RoadFormatError(f"{path}:{lineno}: {exc}") from exc
    return RoadSet(lines)


def write_roads(rs: RoadSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ln in rs.lines:
            coords = ", ".join(f"{x!r} {y!r}" for x, y in ln.vertices.tolist())
            fh.write(f"{ln.highway_class}\tLINESTRING({coords})\n")


def filter_classes(rs: RoadSet, allow=VEHICLE_CLASSES) -> RoadSet:
    allow = frozenset(allow)
    kept = [ln for ln in rs.lines
            if ln.highway_class in allow or base_class(ln.highway_class) in allow]
    return RoadSet(kept, allow)


def _segment_distance_sq(px, py, a, b):
    """Squared distance from points to segment ``a``-``b``."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    seg_len_sq = dx * dx + dy * dy
    if seg_len_sq == 0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - a[0]) * dx + (py - a[1]) * dy) / seg_len_sq, 0.0, 1.0)
    ex = px - (a[0] + t * dx)
    ey = py - (a[1] + t * dy)
    return ex * ex + ey * ey


def buffer_to_mask(rs: RoadSet, distance: float, template: Raster) -> RoadMask:
    """Pixels whose center lies within ``distance`` meters of any segment."""
    if not distance > 0:
        raise ValueError("buffer distance must be positive")
    rows, cols = template.shape
    mask = np.zeros((rows, cols), dtype=bool)
    d_sq = distance * distance
    margin = distance / template.resolution + 1
    for line in rs.lines:
        for a, b in line.segments():
            ra, ca = template.world_to_pixel(*a)
            rb, cb = template.world_to_pixel(*b)
            r0 = max(0, int(np.floor(min(ra, rb) - margin)))
            r1 = min(rows, int(np.ceil(max(ra, rb) + margin)) + 1)
            c0 = max(0, int(np.floor(min(ca, cb) - margin)))
            c1 = min(cols, int(np.ceil(max(ca, cb) + margin)) + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            rr, cc = np.mgrid[r0:r1, c0:c1]
            px, py = template.pixel_center(rr, cc)
            mask[r0:r1, c0:c1] |= _segment_distance_sq(px, py, a, b) <= d_sq
    return RoadMask(mask, float(distance))
