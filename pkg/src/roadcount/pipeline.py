"""End-to-end detection chain and training-sample construction.

road mask -> per-band TopHat/BottomHat -> l2 fusion -> thresholds ->
NDVI mask -> 8-connected objects -> shadow-adjacent removal -> shape
filter -> anchors -> classifier -> modified NMS
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .candidates import (AnchorConfig, CandidateObject, ShapeRules, connected_components,
                         generate_anchors, remove_shadow_adjacent, shape_filter)
from .morph import StructuringElement, bottom_hat, tiled, top_hat
from .net.patches import PatchBatch, SampleSet, extract_patches
from .net.train import classify
from .nms import Detection, iou, modified_nms
from .raster import Raster, apply_mask, l2_fuse, ndvi, otsu_threshold, threshold


@dataclass(frozen=True)
class DetectConfig:
    tophat_threshold: float | str = "otsu"
    bottomhat_threshold: float | str = "otsu"
    ndvi_threshold: float | str = "otsu"
    se_size: int = 7
    red_band: int = 2
    nir_band: int = 3
    adjacency_threshold: float = 0.30
    shape: ShapeRules = ShapeRules()
    anchors: AnchorConfig = AnchorConfig()
    classifier_threshold: float = 0.5
    iou_threshold: float = 0.3
    ioa_threshold: float = 0.7
    prob_band: float = 0.05
    tile_rows: int = 128


@dataclass
class CandidateStage:
    bright_mask: np.ndarray
    dark_mask: np.ndarray
    bright: list[CandidateObject]
    dark: list[CandidateObject]
    candidates: list[CandidateObject] = field(default_factory=list)
    anchors: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)


def _resolve(value, band, mask):
    return otsu_threshold(band, mask) if value == "otsu" else float(value)


def hat_responses(img: Raster, se: StructuringElement, tile_rows=128, threads=1):
    """l2-fused TopHat and BottomHat responses of all bands."""
    halo = 2 * se.radius[0]
    tops = [tiled(lambda b: top_hat(b, se), img.band(k), halo, tile_rows, threads)
            for k in range(img.bands)]
    bottoms = [tiled(lambda b: bottom_hat(b, se), img.band(k), halo, tile_rows, threads)
               for k in range(img.bands)]
    return l2_fuse(np.stack(tops)), l2_fuse(np.stack(bottoms))


def extract_candidates(img: Raster, road_mask, cfg: DetectConfig = DetectConfig(),
                       threads: int = 1) -> CandidateStage:
    road = np.asarray(getattr(road_mask, "mask", road_mask), dtype=bool)
    if road.shape != img.shape:
        raise ValueError(f"road mask {road.shape} does not match raster {img.shape}")
    se = StructuringElement.square(cfg.se_size)
    top, bottom = hat_responses(img, se, cfg.tile_rows, threads)
    veg_index = ndvi(img.band(cfg.red_band), img.band(cfg.nir_band))
    t_top = _resolve(cfg.tophat_threshold, top, road)
    t_bottom = _resolve(cfg.bottomhat_threshold, bottom, road)
    t_ndvi = _resolve(cfg.ndvi_threshold, veg_index, None)
    vegetation = threshold(veg_index, t_ndvi, "above")
    keep = apply_mask(road, vegetation, "and_not")
    bright_mask = apply_mask(threshold(top, t_top, "above"), keep)
    dark_mask = apply_mask(threshold(bottom, t_bottom, "above"), keep)
    bright = connected_components(bright_mask, "bright")
    dark = connected_components(dark_mask, "dark", start_id=len(bright))
    dark_kept = remove_shadow_adjacent(dark, bright, cfg.adjacency_threshold, img.shape, cfg.shape)
    candidates = [o for o in bright + dark_kept if shape_filter(o, cfg.shape).passed]
    anchors = [a for o in candidates for a in generate_anchors(o, cfg.anchors)]
    return CandidateStage(bright_mask, dark_mask, bright, dark, candidates, anchors,
                          {"tophat": t_top, "bottomhat": t_bottom, "ndvi": t_ndvi})


def detect(img: Raster, road_mask, weights, cfg: DetectConfig = DetectConfig(),
           image_id: str = "", threads: int = 1):
    """Detections after classification and modified NMS, plus the candidate stage."""
    stage = extract_candidates(img, road_mask, cfg, threads)
    index = {id(a): k for k, a in enumerate(stage.anchors)}
    scored = classify(weights, img, stage.anchors, cfg.classifier_threshold, threads=threads)
    dets = [Detection(a.box, p, image_id, index[id(a)]) for a, p in scored]
    return modified_nms(dets, cfg.shape, cfg.iou_threshold, cfg.ioa_threshold,
                        cfg.prob_band), stage


def road_statistics(images, masks):
    """Per-band mean and std over road pixels of all images."""
    pixels = np.concatenate([img.values[:, np.asarray(getattr(m, "mask", m), bool)].T
                             for img, m in zip(images, masks)])
    std = pixels.std(axis=0)
    return pixels.mean(axis=0).astype(np.float32), np.where(std > 0, std, 1.0).astype(np.float32)


def label_anchors(anchors, truth_boxes, pos_iou=0.5, neg_iou=0.2):
    """1 / 0 / -1 (ignored) per anchor from its best IOU with the truth."""
    labels = np.full(len(anchors), -1, dtype=np.int64)
    if not truth_boxes:
        labels[:] = 0
        return labels
    centers = np.array([[b.cx, b.cy] for b in truth_boxes])
    for k, a in enumerate(anchors):
        d = np.hypot(*(centers - [a.box.cx, a.box.cy]).T)
        near = np.nonzero(d < a.box.length + 6.0)[0]
        best = max((iou(a.box, truth_boxes[j]) for j in near), default=0.0)
        labels[k] = 1 if best >= pos_iou else (0 if best < neg_iou else -1)
    return labels


def build_samples(scenes, cfg: DetectConfig = DetectConfig(), max_samples: int = 2000,
                  positive_fraction: float = 0.4, pos_iou: float = 0.5, neg_iou: float = 0.2,
                  seed: int = 0, norm=None, threads: int = 1) -> SampleSet:
    """Labelled patch triples drawn from candidate anchors of annotated images.

    ``scenes`` yields ``(image_id, raster, road_mask, truth_boxes)``.
    """
    scenes = list(scenes)
    rng = np.random.default_rng(seed)
    if norm is None:
        norm = road_statistics([s[1] for s in scenes], [s[2] for s in scenes])
    pos, neg = [], []
    for image_id, img, road, truth in scenes:
        anchors = extract_candidates(img, road, cfg, threads).anchors
        labels = label_anchors(anchors, list(truth), pos_iou, neg_iou)
        for a, lab in zip(anchors, labels):
            if lab == 1:
                pos.append((image_id, img, a))
            elif lab == 0:
                neg.append((image_id, img, a))
    n_pos = min(len(pos), int(round(max_samples * positive_fraction)))
    n_neg = min(len(neg), max_samples - n_pos)
    chosen = ([(pos[i], 1) for i in np.sort(rng.choice(len(pos), n_pos, replace=False))]
              + [(neg[i], 0) for i in np.sort(rng.choice(len(neg), n_neg, replace=False))])
    batches, labels, ids = [], [], []
    by_image = {}
    for (image_id, img, a), lab in chosen:
        by_image.setdefault(image_id, (img, []))[1].append((a, lab))
    for image_id, (img, items) in by_image.items():
        batches.append(extract_patches(img, [a for a, _ in items]))
        labels += [lab for _, lab in items]
        ids += [image_id] * len(items)
    patches = PatchBatch.concat(batches) if batches else extract_patches(scenes[0][1], [])
    return SampleSet(patches, labels, norm[0], norm[1], ids)
