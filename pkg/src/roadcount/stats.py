"""Vehicle counts, change percentages, block densities and accuracy metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .nms import iou
from .raster import write_pgm
from .shadow import center_pixels


@dataclass
class EpochCounts:
    image_id: str
    all_vehicles: int
    main_road_vehicles: int


@dataclass
class BlockGrid:
    block_size: float
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (detection, label)


def count_on_mask(dets, mask) -> int:
    mask = getattr(mask, "mask", mask)
    rows, cols, inside = center_pixels(list(dets), mask.shape)
    return int(np.count_nonzero(mask[rows[inside], cols[inside]]))


def within_region(items, region) -> list:
    """Detections or boxes whose center pixel lies inside ``region``."""
    items = list(items)
    region = np.asarray(getattr(region, "mask", region), dtype=bool)
    as_dets = [it if hasattr(it, "box") else _Boxed(it) for it in items]
    rows, cols, inside = center_pixels(as_dets, region.shape)
    keep = np.zeros(len(items), dtype=bool)
    keep[inside] = region[rows[inside], cols[inside]]
    return [it for it, k in zip(items, keep) if k]


@dataclass
class _Boxed:
    box: object


def dropping_percentage(count: int, baseline: int) -> int:
    """Signed change versus ``baseline`` in integer percent, halves away from zero."""
    if baseline <= 0:
        raise ValueError("baseline count must be positive")
    change = Fraction(count - baseline, baseline) * 100
    magnitude = math.floor(abs(change) + Fraction(1, 2))
    return magnitude if change >= 0 else -magnitude


def block_density(dets, extent, block_size: float = 300.0) -> BlockGrid:
    """Counts of detection centers per ``block_size`` meter block from the raster origin."""
    if not block_size > 0:
        raise ValueError("block size must be positive")
    res = extent.resolution
    n_rows = math.ceil(extent.rows * res / block_size)
    n_cols = math.ceil(extent.cols * res / block_size)
    counts = np.zeros((n_rows, n_cols), dtype=np.int64)
    dets = list(dets)
    if dets:
        x = (np.array([d.box.cx for d in dets]) + 0.5) * res
        y = (np.array([d.box.cy for d in dets]) + 0.5) * res
        inside = (x >= 0) & (x < extent.cols * res) & (y >= 0) & (y < extent.rows * res)
        bi = np.floor(y[inside] / block_size).astype(np.intp)
        bj = np.floor(x[inside] / block_size).astype(np.intp)
        np.add.at(counts, (bi, bj), 1)
    return BlockGrid(float(block_size), counts)


def match_detections(dets, labels, iou_min: float = 0.3) -> MatchResult:
    """Greedy one-to-one matching in descending detection probability."""
    if not 0 < iou_min < 1:
        raise ValueError("iou_min must lie in (0, 1)")
    dets, labels = list(dets), list(labels)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].prob, i))
    free = set(range(len(labels)))
    centers = np.array([[b.cx, b.cy] for b in labels]).reshape(-1, 2)
    pairs = []
    for i in order:
        box = dets[i].box
        best, best_j = 0.0, None
        if free:
            near = np.hypot(*(centers - [box.cx, box.cy]).T) < (
                box.length + np.array([b.length for b in labels]))
            for j in sorted(free):
                if near[j]:
                    v = iou(box, labels[j])
                    if v > best:
                        best, best_j = v, j
        if best_j is not None and best >= iou_min:
            free.discard(best_j)
            pairs.append((i, best_j))
    tp = len(pairs)
    return MatchResult(tp, len(dets) - tp, len(labels) - tp, pairs)


def precision_recall_f1(tp: int, fp: int, fn: int) -> EvalReport:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return EvalReport(tp, fp, fn, p, r, f1_score(p, r))


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


COUNT_FIELDS = ["stage", "image_id", "all_vehicles", "main_road_vehicles",
                "drop_all_pct", "drop_main_pct"]


def _signed(v):
    return "" if v is None else f"{v:+d}"


def counts_table(counts: list[EpochCounts], stage: str = "after_shadow_removal"):
    """Rows mirroring the counts/dropping-percentage table; first epoch is the baseline."""
    if not counts:
        raise ValueError("empty series")
    base = counts[0]
    rows = []
    for k, c in enumerate(counts):
        drop_all = drop_main = None
        if k:
            drop_all = dropping_percentage(c.all_vehicles, base.all_vehicles)
            drop_main = dropping_percentage(c.main_road_vehicles, base.main_road_vehicles)
        rows.append({"stage": stage, "image_id": c.image_id, "all_vehicles": c.all_vehicles,
                     "main_road_vehicles": c.main_road_vehicles,
                     "drop_all_pct": drop_all, "drop_main_pct": drop_main})
    return rows


def write_counts_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNT_FIELDS)
        for r in rows:
            w.writerow([r["stage"], r["image_id"], r["all_vehicles"], r["main_road_vehicles"],
                        _signed(r["drop_all_pct"]), _signed(r["drop_main_pct"])])


def read_counts_csv(path) -> list[EpochCounts]:
    with open(path, newline="") as fh:
        return [EpochCounts(r["image_id"], int(r["all_vehicles"]), int(r["main_road_vehicles"]))
                for r in csv.DictReader(fh)]


def write_heatmap(grid: BlockGrid, path, vmax: int | None = None) -> None:
    """Block counts as an 8-bit PGM scaled so ``vmax`` (default: grid max) is white."""
    vmax = grid.counts.max() if vmax is None else vmax
    scaled = np.zeros_like(grid.counts) if vmax <= 0 else (
        np.rint(grid.counts * 255.0 / vmax).astype(np.int64))
    write_pgm(scaled, path)


def write_plot_manifest(series: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(series, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_eval_csv(reports: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "tp", "fp", "fn", "precision", "recall", "f1"])
        for image_id, r in reports.items():
            w.writerow([image_id, r.tp, r.fp, r.fn, f"{r.precision:.4f}",
                        f"{r.recall:.4f}", f"{r.f1:.4f}"])
