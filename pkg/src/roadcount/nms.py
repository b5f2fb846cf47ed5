"""Modified non-maximum suppression for oriented vehicle detections.

Detections are grouped by single-link overlap (IOU or IOA above its
threshold); each group keeps the smallest box among those whose probability
is within ``prob_band`` of the group maximum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import cKDTree

from .candidates import ShapeRules
from .geometry import OrientedBox, intersection_area


@dataclass(frozen=True)
class Detection:
    box: OrientedBox
    prob: float
    image_id: str = ""
    id: int = 0

    def __post_init__(self):
        if not 0 < self.prob < 1:
            raise ValueError(f"probability must lie in (0, 1), got {self.prob}")


def iou(a: OrientedBox, b: OrientedBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return min(1.0, inter / (a.area + b.area - inter))


def ioa(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over the smaller box's area."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return min(1.0, inter / min(a.area, b.area))


def overlaps(a: OrientedBox, b: OrientedBox, iou_t: float, ioa_t: float) -> bool:
    inter = intersection_area(a, b)
    if inter == 0:
        return False
    return (inter / (a.area + b.area - inter) > iou_t
            or inter / min(a.area, b.area) > ioa_t)


def select_in_cluster(dets, prob_band: float = 0.05) -> Detection:
    top = max(d.prob for d in dets)
    qualified = [d for d in dets if d.prob >= top - prob_band]
    return min(qualified, key=lambda d: (d.box.area, -d.prob, d.id))


def overlap_clusters(dets, iou_t: float, ioa_t: float) -> list[list[int]]:
    """Connected components of the overlap graph, as sorted index lists."""
    n = len(dets)
    if n == 0:
        return []
    centers = np.array([[d.box.cx, d.box.cy] for d in dets])
    radius = max(math.hypot(d.box.length, d.box.width) / 2 for d in dets)
    groups = DisjointSet(range(n))
    for i, j in sorted(cKDTree(centers).query_pairs(2 * radius)):
        if not groups.connected(i, j) and overlaps(dets[i].box, dets[j].box, iou_t, ioa_t):
            groups.merge(i, j)
    return sorted(sorted(s) for s in groups.subsets())


def modified_nms(dets, rules: ShapeRules = ShapeRules(), iou_t: float = 0.3,
                 ioa_t: float = 0.7, prob_band: float = 0.05) -> list[Detection]:
    if not (0 < iou_t < 1 and 0 < ioa_t < 1):
        raise ValueError("overlap thresholds must lie in (0, 1)")
    kept = [d for d in dets if rules.box_violation(d.box.length, d.box.width) is None]
    survivors = [select_in_cluster([kept[i] for i in group], prob_band)
                 for group in overlap_clusters(kept, iou_t, ioa_t)]
    return sorted(survivors, key=lambda d: d.id)


DETECTION_FIELDS = ["image_id", "cx", "cy", "length", "width", "angle_deg", "prob"]


def write_detections(dets, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_FIELDS)
        for d in dets:
            b = d.box
            w.writerow([d.image_id, repr(b.cx), repr(b.cy), repr(b.length), repr(b.width),
                        repr(math.degrees(b.angle)), repr(d.prob)])


def read_detections(path) -> list[Detection]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for i, r in enumerate(rows):
        box = OrientedBox(float(r["cx"]), float(r["cy"]), float(r["length"]),
                          float(r["width"]), math.radians(float(r["angle_deg"])))
        out.append(Detection(box, float(r["prob"]), r["image_id"], i))
    return out
