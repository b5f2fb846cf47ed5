"""Deterministic synthetic road scenes with exact vehicle ground truth.

Scenes are 4-band (blue, green, red, nir) reflectance rasters at 1 m.  Road
layout, vegetation, road markings and building sites depend only on
``SceneConfig.seed``.  Vehicles are placed from one stream per seed, so an
epoch of n vehicles holds the first n of any busier epoch; shadow extents
and sensor noise are redrawn per epoch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .candidates import CandidateObject, shape_filter
from .geometry import OrientedBox, intersection_area
from .raster import Raster
from .roads import RoadLine, RoadSet, buffer_to_mask

ASPHALT = np.array([0.17, 0.18, 0.19, 0.20])
SOIL = np.array([0.20, 0.24, 0.28, 0.33])
VEGETATION = np.array([0.04, 0.08, 0.05, 0.45])
DARK_VEHICLE = np.array([0.045, 0.045, 0.05, 0.05])
CAST_SHADOW = np.array([0.085, 0.07, 0.06, 0.065])
SHADOW_ATTENUATION = np.array([0.5, 0.34, 0.26, 0.3])
MARKING = np.array([0.55, 0.55, 0.55, 0.55])
BRIGHT_PAINTS = np.array([
    [0.80, 0.80, 0.80, 0.80],   # white
    [0.60, 0.62, 0.63, 0.63],   # silver
    [0.18, 0.20, 0.70, 0.68],   # red
    [0.20, 0.62, 0.70, 0.68],   # yellow
    [0.62, 0.45, 0.35, 0.36],   # light blue
])


class InfeasibleDensityError(ValueError):
    """Requested vehicles cannot be placed with the configured spacing."""


@dataclass(frozen=True)
class RoadSpec:
    highway_class: str
    vertices: tuple            # meter-frame (x, y) pairs
    paved_width: float         # meters
    main: bool = False
    carries_traffic: bool = True


def default_roads(rows: int = 512, cols: int = 512, resolution: float = 1.0):
    """A small network: two horizontals, a vertical, a diagonal, a ramp, a footway."""
    w, h = cols * resolution, rows * resolution
    return (
        RoadSpec("primary", ((0.0, 0.78 * h), (w, 0.78 * h)), 16.0, main=True),
        RoadSpec("secondary", ((0.0, 0.29 * h), (w, 0.29 * h)), 12.0),
        RoadSpec("trunk", ((0.25 * w, 0.0), (0.25 * w, h)), 16.0, main=True),
        RoadSpec("tertiary", ((0.52 * w, 0.0), (w, 0.55 * h)), 10.0),
        RoadSpec("primary_link", ((0.25 * w, 0.55 * h), (0.45 * w, 0.78 * h)), 8.0),
        RoadSpec("footway", ((0.6 * w, 0.29 * h), (0.75 * w, h)), 3.0, carries_traffic=False),
    )


@dataclass(frozen=True)
class SceneConfig:
    rows: int = 512
    cols: int = 512
    resolution: float = 1.0
    roads: tuple = None
    vehicle_density: float = 55.0        # vehicles per road-km on traffic roads
    n_vehicles: int | None = None        # overrides density when set
    multiplier: float = 1.0
    length_range: tuple = (3.0, 6.0)     # px
    width_range: tuple = (2.0, 3.0)      # px
    dark_fraction: float = 0.3
    cast_shadow_probability: float = 0.6
    min_gap: float = 4.0                 # px between vehicle footprints
    marking_density: float = 25.0        # lane dashes per road-km
    spot_density: float = 10.0           # manhole/stain spots per road-km
    vegetation_cover: float = 0.25
    building_shadows: int = 6
    building_shadow_size: tuple = (25.0, 70.0)
    noise_sigma: float = 0.004
    seed: int = 0
    epoch: int = 0

    def road_specs(self):
        return self.roads if self.roads is not None else default_roads(
            self.rows, self.cols, self.resolution)


@dataclass
class GroundTruth:
    boxes: list[OrientedBox] = field(default_factory=list)
    polarity: list[str] = field(default_factory=list)
    multiplier: float = 1.0

    def __len__(self):
        return len(self.boxes)


@dataclass
class Scene:
    raster: Raster
    truth: GroundTruth
    roads: RoadSet
    main_roads: RoadSet
    shadow_truth: np.ndarray


def _coverage(box: OrientedBox, shape, supersample: int = 4):
    """Fractional pixel coverage of ``box`` within its bounding window."""
    corners = box.corners()
    c0 = max(0, int(math.floor(corners[:, 0].min())) - 1)
    c1 = min(shape[1], int(math.ceil(corners[:, 0].max())) + 2)
    r0 = max(0, int(math.floor(corners[:, 1].min())) - 1)
    r1 = min(shape[0], int(math.ceil(corners[:, 1].max())) + 2)
    if r0 >= r1 or c0 >= c1:
        return None
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    yy, xx = np.mgrid[r0:r1, c0:c1]
    px = (xx[..., None, None] + off[None, None, None, :]).reshape(-1)
    py = (yy[..., None, None] + off[None, None, :, None]).reshape(-1)
    inside = box.contains(np.stack([px, py], axis=1), eps=0.0)
    cov = inside.reshape(r1 - r0, c1 - c0, -1).mean(axis=-1)
    return (slice(r0, r1), slice(c0, c1)), cov


def _paint(values, box, color, shape, alpha=1.0):
    res = _coverage(box, shape)
    if res is None:
        return
    (rs, cs), cov = res
    a = (cov * alpha)[None]
    values[:, rs, cs] = values[:, rs, cs] * (1 - a) + np.asarray(color)[:, None, None] * a


def footprint(box: OrientedBox, shape, level: float = 0.5) -> np.ndarray:
    """(row, col) pixels covered at least ``level`` by ``box``."""
    res = _coverage(box, shape)
    if res is None:
        return np.zeros((0, 2), dtype=np.int64)
    (rs, cs), cov = res
    rr, cc = np.nonzero(cov >= level)
    return np.stack([rr + rs.start, cc + cs.start], axis=1)


def _smooth_field(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


class _Layout:
    """Static part of a scene: roads, land cover, markings."""

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        shape = (cfg.rows, cfg.cols)
        self.template = Raster(np.zeros((1, *shape), np.float32), cfg.resolution,
                               (0.0, cfg.rows * cfg.resolution))
        specs = cfg.road_specs()
        self.specs = specs
        self.roads = RoadSet([RoadLine(s.vertices, s.highway_class) for s in specs])
        self.main_roads = RoadSet([RoadLine(s.vertices, s.highway_class) for s in specs if s.main])
        rng = np.random.default_rng([cfg.seed, 0])
        veg_field = _smooth_field(rng, shape, 12.0)
        self.vegetation = veg_field > np.quantile(veg_field, 1 - cfg.vegetation_cover)
        self.paved = np.zeros(shape, dtype=bool)
        for s in specs:
            one = RoadSet([RoadLine(s.vertices, s.highway_class)])
            self.paved |= buffer_to_mask(one, s.paved_width / 2, self.template).mask
        self.vegetation &= ~self.paved
        base = SOIL[:, None, None] * (1 + 0.05 * _smooth_field(rng, shape, 6.0))[None]
        base = np.where(self.vegetation[None], VEGETATION[:, None, None], base)
        asphalt = ASPHALT[:, None, None] * (1 + 0.02 * _smooth_field(rng, shape, 3.0))[None]
        self.base = np.where(self.paved[None], asphalt, base)
        self.traffic = [s for s in specs if s.carries_traffic]
        self.segments = []
        for s in self.traffic:
            v = np.asarray(s.vertices, dtype=np.float64)
            for a, b in zip(v[:-1], v[1:]):
                self.segments.append((s, a, b, float(np.hypot(*(b - a)))))
        self.road_km = sum(seg[3] for seg in self.segments) / 1000.0
        self.static_boxes = []
        self._markings(rng)

    def shadow_sites(self, n):
        """Fixed building sites beside the roads; the same for every epoch."""
        sites = []
        rng = np.random.default_rng([self.cfg.seed, 2])
        lo, hi = self.cfg.building_shadow_size
        for _ in range(n):
            x, y, ang = self.sample_on_road(rng, -6.0)
            sites.append((x, y, ang + rng.uniform(-0.3, 0.3), rng.uniform(lo, hi),
                          rng.uniform(lo, hi) * 0.6))
        return sites

    def to_pixel(self, x, y):
        row, col = self.template.world_to_pixel(x, y)
        return float(col), float(row)

    def sample_on_road(self, rng, margin):
        """Random point inside the paved area of a traffic road, plus road angle."""
        lengths = np.array([seg[3] for seg in self.segments])
        k = rng.choice(len(self.segments), p=lengths / lengths.sum())
        spec, a, b, seg_len = self.segments[k]
        t = rng.uniform(0, 1)
        half = spec.paved_width / 2 - margin
        offset = rng.uniform(-half, half) if half > 0 else 0.0
        d = (b - a) / seg_len
        p = a + t * (b - a) + offset * np.array([-d[1], d[0]])
        x, y = self.to_pixel(*p)
        # meter frame has y up, pixel frame y down
        return x, y, math.atan2(-d[1], d[0])

    def _markings(self, rng):
        cfg = self.cfg
        shape = (cfg.rows, cfg.cols)
        self.marks = self.base.copy()
        n_dash = int(round(cfg.marking_density * self.road_km))
        for _ in range(n_dash):
            x, y, ang = self.sample_on_road(rng, 1.0)
            box = OrientedBox(x, y, rng.uniform(3.0, 5.0), rng.uniform(0.2, 0.45), ang)
            _paint(self.marks, box, MARKING, shape)
            self.static_boxes.append(box)
        n_spot = int(round(cfg.spot_density * self.road_km))
        for _ in range(n_spot):
            x, y, ang = self.sample_on_road(rng, 1.0)
            size = rng.uniform(0.8, 1.6)
            color = MARKING * 0.9 if rng.random() < 0.5 else DARK_VEHICLE * 1.2
            box = OrientedBox(x, y, size, size, rng.uniform(0, math.pi))
            _paint(self.marks, box, color, shape)
            self.static_boxes.append(box)


def _clear(box, placed_boxes, gap):
    grown = OrientedBox(box.cx, box.cy, box.length + 2 * gap, box.width + 2 * gap, box.angle)
    reach = math.hypot(grown.length, grown.width) / 2
    for other in placed_boxes:
        if math.hypot(box.cx - other.cx, box.cy - other.cy) > reach + math.hypot(
                other.length, other.width) / 2:
            continue
        if intersection_area(grown, other) > 0:
            return False
    return True


def _vehicle_count(cfg: SceneConfig, layout: _Layout) -> int:
    base = cfg.n_vehicles if cfg.n_vehicles is not None else cfg.vehicle_density * layout.road_km
    return int(round(base * cfg.multiplier))


def _building_shadows(cfg, layout, rng):
    """Shadows of the first ``building_shadows`` buildings; extents vary per epoch."""
    shape = (cfg.rows, cfg.cols)
    mask = np.zeros(shape, dtype=bool)
    for x, y, ang, length, width in layout.shadow_sites(cfg.building_shadows):
        scale = rng.uniform(0.85, 1.15)
        box = OrientedBox.normalized(x, y, length * scale, width * scale, ang)
        px = footprint(box, shape, 0.5)
        mask[px[:, 0], px[:, 1]] = True
    return mask


def generate_scene(cfg: SceneConfig = SceneConfig(), layout: _Layout | None = None) -> Scene:
    layout = layout or _Layout(cfg)
    shape = (cfg.rows, cfg.cols)
    # one placement stream per layout: a quieter epoch holds a prefix of a
    # busier epoch's vehicles, so epochs differ by the multiplier, not by draw
    rng = np.random.default_rng([cfg.seed, 1])
    values = layout.marks.copy()
    n = _vehicle_count(cfg, layout)
    truth = GroundTruth(multiplier=cfg.multiplier)
    occupied = list(layout.static_boxes)
    sun = np.array([math.cos(0.9), math.sin(0.9)])
    margin = cfg.width_range[1] / 2 + 0.5
    attempts = 0
    while len(truth) < n:
        attempts += 1
        if attempts > 200 * max(n, 1):
            raise InfeasibleDensityError(
                f"placed {len(truth)} of {n} vehicles; lower the density or the gap")
        x, y, ang = layout.sample_on_road(rng, margin)
        if not (8 <= x <= cfg.cols - 9 and 8 <= y <= cfg.rows - 9):
            continue
        length = rng.uniform(*cfg.length_range)
        width = min(rng.uniform(*cfg.width_range), length)
        box = OrientedBox(x, y, length, width, ang + rng.normal(0, 0.05))
        dark = rng.random() < cfg.dark_fraction
        shadow = None
        if not dark and rng.random() < cfg.cast_shadow_probability:
            shift = rng.uniform(1.2, 2.0)
            shadow = OrientedBox(x + shift * sun[0], y + shift * sun[1], length, width, box.angle)
        extent = box if shadow is None else OrientedBox.normalized(
            x + shift * sun[0] / 2, y + shift * sun[1] / 2, length + shift, width + shift,
            box.angle)
        if not _clear(extent, occupied, cfg.min_gap):
            continue
        if not shape_filter(CandidateObject(footprint(box, shape))).passed:
            continue
        if shadow is not None:
            _paint(values, shadow, CAST_SHADOW, shape, alpha=0.9)
        paint = DARK_VEHICLE if dark else BRIGHT_PAINTS[rng.integers(len(BRIGHT_PAINTS))]
        _paint(values, box, paint * rng.uniform(0.92, 1.08), shape)
        occupied.append(extent)
        truth.boxes.append(box)
        truth.polarity.append("dark" if dark else "bright")
    rng = np.random.default_rng([cfg.seed, 3, cfg.epoch])
    shadow_truth = _building_shadows(cfg, layout, rng)
    # skylight-lit shadow: dark and blue-shifted (bands are B, G, R, NIR)
    att = SHADOW_ATTENUATION[:, None, None]
    values = np.where(shadow_truth[None], values * att, values)
    values = values + rng.normal(0, cfg.noise_sigma, values.shape)
    raster = Raster(np.clip(values, 0, 1).astype(np.float32), cfg.resolution,
                    layout.template.origin)
    return Scene(raster, truth, layout.roads, layout.main_roads, shadow_truth)


DEFAULT_MULTIPLIERS = (1.0, 0.93, 0.14, 0.20, 1.47)
# winter acquisitions cast long shadows; the last epoch is a summer scene
DEFAULT_SHADOW_COUNTS = (7, 7, 7, 7, 3)


def generate_series(cfg: SceneConfig = SceneConfig(), multipliers=DEFAULT_MULTIPLIERS,
                    shadow_counts=None) -> list[Scene]:
    multipliers = list(multipliers)
    if any(m < 0 for m in multipliers):
        raise ValueError("multipliers must be non-negative")
    layout = _Layout(cfg)
    scenes = []
    for k, m in enumerate(multipliers):
        epoch_cfg = replace(cfg, multiplier=cfg.multiplier * m, epoch=cfg.epoch + k)
        if shadow_counts is not None:
            epoch_cfg = replace(epoch_cfg, building_shadows=shadow_counts[k])
        scenes.append(generate_scene(epoch_cfg, layout))
    return scenes


TRUTH_FIELDS = ["cx", "cy", "length", "width", "angle_deg", "polarity"]


def write_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_FIELDS)
        for b, pol in zip(truth.boxes, truth.polarity):
            w.writerow([repr(b.cx), repr(b.cy), repr(b.length), repr(b.width),
                        repr(math.degrees(b.angle)), pol])


def read_truth(path) -> GroundTruth:
    truth = GroundTruth()
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            truth.boxes.append(OrientedBox(float(r["cx"]), float(r["cy"]), float(r["length"]),
                                           float(r["width"]), math.radians(float(r["angle_deg"]))))
            truth.polarity.append(r["polarity"])
    return truth
