"""Command line entry point: ``roadcount <subcommand> [--config] [--seed] [--threads] [--out]``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

A run directory produced by ``synth`` holds a ``manifest.json`` (scenes,
truth, road files, roles) and a ready ``pipeline.ini``; every other
subcommand reads the manifest named in ``[paths] manifest``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .candidates import write_candidates
from .config import DESK_PROFILE, ConfigError, PipelineConfig, load_config
from .net.model import NetworkWeights, WeightsFormatError
from .net.patches import SampleSet
from .net.train import fine_tune, train
from .nms import read_detections, write_detections
from .pipeline import build_samples, detect
from .raster import Raster, RasterFormatError, load_raster, store_raster
from .roads import RoadFormatError, buffer_to_mask, filter_classes, parse_roads, write_roads
from .shadow import ShadowMask, clean_shadow, detect_shadow, erase_in_shadow, union_masks
from .stats import (EpochCounts, block_density, count_on_mask, counts_table, match_detections,
                    precision_recall_f1, read_counts_csv, write_counts_csv, write_eval_csv,
                    write_heatmap, write_plot_manifest, within_region)
from .synth import InfeasibleDensityError, generate_scene, generate_series, write_truth, read_truth

log = logging.getLogger("roadcount")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers

def _write_provenance(path: Path, cfg: PipelineConfig, command: str, inputs=()) -> None:
    """Sidecar next to ``path``; holds nothing run- or thread-dependent."""
    payload = {"command": command, "config_sha256": cfg.digest(), "seed": cfg.seed,
               "inputs": sorted(str(i) for i in inputs), "version": __version__}
    with open(str(path) + ".provenance.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg, args) -> Path:
    out = Path(args.out) if args.out else cfg.path("out", required=False)
    if out is None:
        raise ConfigError("no output directory: pass --out or set [paths] out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_manifest(cfg) -> tuple[dict, Path]:
    path = cfg.path("manifest")
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from None
    for key in ("roads", "main_roads", "scenes"):
        if key not in manifest:
            raise DataError(f"{path}: missing '{key}'")
    return manifest, path.parent


def _scenes(manifest, role=None, image_id=None):
    scenes = [s for s in manifest["scenes"] if role is None or s["role"] == role]
    if image_id is not None:
        scenes = [s for s in manifest["scenes"] if s["id"] == image_id]
        if not scenes:
            raise DataError(f"image {image_id!r} is not in the manifest")
    return scenes


class _Context:
    """Manifest-relative file access with cached road masks per raster frame."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.manifest, self.root = _read_manifest(cfg)
        self.roads = filter_classes(parse_roads(self.root / self.manifest["roads"]))
        self.main_roads = parse_roads(self.root / self.manifest["main_roads"])
        self._masks = {}

    def raster(self, scene) -> Raster:
        return load_raster(self.root / scene["image"])

    def truth(self, scene):
        if not scene.get("truth"):
            raise DataError(f"image {scene['id']!r} has no truth file")
        return read_truth(self.root / scene["truth"])

    def road_mask(self, img, main=False):
        key = (img.shape, img.resolution, img.origin, main)
        if key not in self._masks:
            if main:
                mask = buffer_to_mask(self.main_roads, self.cfg.number("roads", "main_buffer"), img)
            else:
                mask = buffer_to_mask(self.roads, self.cfg.number("roads", "buffer"), img)
            self._masks[key] = mask
        return self._masks[key]


def _load_weights(path: Path) -> NetworkWeights:
    if not path.is_file():
        raise DataError(f"weights file not found: {path}")
    return NetworkWeights.load(path)


def _check_finite(weights: NetworkWeights):
    for name, arr in weights.params.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in {name} after training")


def _write_trace(trace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "head", "epoch", "lr", "loss"])
        for e in trace:
            w.writerow([e.phase, e.head, e.epoch, repr(e.lr), repr(e.loss)])


def _samples_for(ctx, scenes, threads):
    cfg, seed = ctx.cfg, ctx.cfg.seed
    items = []
    for s in scenes:
        img = ctx.raster(s)
        items.append((s["id"], img, ctx.road_mask(img), ctx.truth(s).boxes))
    return build_samples(items, cfg.detect_config(), cfg.integer("train", "max_samples"),
                         cfg.number("train", "positive_fraction"), cfg.number("train", "pos_iou"),
                         cfg.number("train", "neg_iou"), seed=seed, threads=threads)


def _finetuned_weights_path(out: Path, image_id: str) -> Path:
    return out / f"weights_{image_id}.netw"


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: PipelineConfig, args) -> int:
    """Training scenes, a held-out scene and an epoch series, plus manifest and config."""
    out = _out_dir(cfg, args)
    scene_cfg = cfg.scene_config()
    n_train = cfg.integer("synth", "train_scenes")
    n_held = cfg.integer("synth", "heldout_scenes")
    multipliers, shadows = cfg.multipliers(), cfg.shadow_counts()
    scenes = []
    # everything is written to a scratch dir first and moved in at the end,
    # so a failure never leaves a partial manifest behind
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        tmp = Path(tmp)
        first = None
        for k in range(n_train + n_held):
            role = "train" if k < n_train else "heldout"
            sc = generate_scene(replace(scene_cfg, seed=scene_cfg.seed * 1000 + 1 + k))
            first = first or sc
            scenes.append(_store_scene(tmp, f"{role}{k}", role, sc))
        series = generate_series(scene_cfg, multipliers, shadows)
        for k, sc in enumerate(series):
            scenes.append(_store_scene(tmp, f"epoch{k}", "series", sc, epoch=k))
            first = first or sc
        write_roads(first.roads, tmp / "roads.txt")
        write_roads(first.main_roads, tmp / "main_roads.txt")
        manifest = {"roads": "roads.txt", "main_roads": "main_roads.txt", "scenes": scenes,
                    "multipliers": list(multipliers)}
        run_cfg = load_config(cfg.source) if cfg.source else cfg
        for key, value in (("manifest", "manifest.json"), ("weights", "weights.netw"),
                           ("samples", "samples"), ("out", ".")):
            run_cfg.set("paths", key, value)
        run_cfg.apply_profile(DESK_PROFILE)
        run_cfg.set("run", "seed", cfg.seed)
        run_cfg.write(tmp / "pipeline.ini")
        for item in sorted(tmp.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            item.replace(target)
        with open(out / "manifest.json.part", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(out / "manifest.json.part", out / "manifest.json")
    _write_provenance(out / "manifest.json", cfg, "synth")
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def _store_scene(root: Path, name: str, role: str, sc, epoch=None) -> dict:
    store_raster(sc.raster, root / f"{name}.grid")
    write_truth(sc.truth, root / f"{name}_truth.csv")
    _store_mask(sc.shadow_truth, root / f"{name}_shadow_truth.grid", sc.raster)
    entry = {"id": name, "role": role, "image": f"{name}.grid", "truth": f"{name}_truth.csv"}
    if epoch is not None:
        entry["epoch"] = epoch
    return entry


def _store_mask(mask, path: Path, frame: Raster) -> None:
    """Binary mask as a 1-band 0/1 GRID raster in the frame of ``frame``."""
    store_raster(Raster(mask[None].astype(np.float32), frame.resolution, frame.origin), path)


def _load_mask(path: Path) -> np.ndarray:
    return load_raster(path).band(0) > 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    ctx = _Context(cfg)
    out = _out_dir(cfg, args)
    scenes = _scenes(ctx.manifest, "train")
    if not scenes:
        raise DataError("manifest has no training scenes")
    samples = _samples_for(ctx, scenes, args.threads)
    samples_dir = out / "samples"
    samples.save(samples_dir)
    arch = cfg.architecture(samples.patches.window.shape[-1])
    result = train(samples, cfg.train_config(), arch)
    _check_finite(result.weights)
    weights_path = out / "weights.netw" if args.out else cfg.path("weights")
    result.weights.save(weights_path)
    _write_trace(result.trace, out / "train_trace.csv")
    _write_provenance(weights_path, cfg, "train", [s["id"] for s in scenes])
    print(f"trained on {len(samples)} samples ({samples.n_v} vehicle); weights {weights_path}")
    return EXIT_OK


def cmd_finetune(cfg: PipelineConfig, args) -> int:
    if not args.image:
        raise ConfigError("finetune needs --image <id>")
    ctx = _Context(cfg)
    out = _out_dir(cfg, args)
    weights = _load_weights(cfg.path("weights"))
    samples = _samples_for(ctx, _scenes(ctx.manifest, image_id=args.image), args.threads)
    epochs = cfg.integer("train", "finetune_epochs") if args.epochs is None else args.epochs
    result = fine_tune(weights, samples, cfg.train_config(), epochs)
    _check_finite(result.weights)
    path = _finetuned_weights_path(out, args.image)
    result.weights.save(path)
    _write_trace(result.trace, out / f"finetune_trace_{args.image}.csv")
    _write_provenance(path, cfg, "finetune", [args.image])
    print(f"fine-tuned on {len(samples)} samples of {args.image}; weights {path}")
    return EXIT_OK


def cmd_detect(cfg: PipelineConfig, args) -> int:
    ctx = _Context(cfg)
    out = _out_dir(cfg, args)
    det_cfg = cfg.detect_config()
    base_weights = _load_weights(cfg.path("weights"))
    scenes = _scenes(ctx.manifest, image_id=args.image) if args.image else ctx.manifest["scenes"]
    for s in scenes:
        img = ctx.raster(s)
        tuned = _finetuned_weights_path(out, s["id"])
        weights = _load_weights(tuned) if tuned.is_file() else base_weights
        if weights.arch.bands != img.bands:
            raise DataError(f"weights expect {weights.arch.bands} bands, "
                            f"{s['id']} has {img.bands}")
        dets, stage = detect(img, ctx.road_mask(img), weights, det_cfg, s["id"], args.threads)
        path = out / f"detections_{s['id']}.csv"
        write_detections(dets, path)
        write_candidates(stage.candidates, out / f"candidates_{s['id']}.csv")
        _write_provenance(path, cfg, "detect", [s["id"], tuned.name if tuned.is_file()
                                                else "weights"])
        print(f"{s['id']}: {len(stage.candidates)} candidates, "
              f"{len(stage.anchors)} anchors, {len(dets)} detections")
    return EXIT_OK


def _shadow_masks(ctx, scenes):
    cfg = ctx.cfg
    threshold = cfg.threshold("shadow", allow_otsu=False)
    masks = []
    for s in scenes:
        m = detect_shadow(ctx.raster(s), threshold, cfg.rgb_bands(), s["id"],
                          cfg.shadow_max_value())
        masks.append(clean_shadow(m, cfg.integer("shadow", "close_size"),
                                  cfg.integer("shadow", "open_size")))
    return masks


def cmd_shadowmask(cfg: PipelineConfig, args) -> int:
    ctx = _Context(cfg)
    out = _out_dir(cfg, args)
    scenes = _scenes(ctx.manifest, "series")
    if not scenes:
        raise DataError("manifest has no series scenes")
    frame = ctx.raster(scenes[0])
    masks = _shadow_masks(ctx, scenes)
    for m in masks:
        _store_mask(m.mask, out / f"shadow_{m.image_id}.grid", frame)
    union = union_masks(masks)
    _store_mask(union, out / "shadow_union.grid", frame)
    _write_provenance(out / "shadow_union.grid", cfg, "shadowmask", [s["id"] for s in scenes])
    print(f"shadow union covers {int(union.sum())} px over {len(masks)} epochs")
    return EXIT_OK


def _report_from_counts(cfg, args, out: Path) -> int:
    counts = read_counts_csv(args.counts)
    if not counts:
        raise DataError("empty series: no report emitted")
    rows = counts_table(counts)
    path = out / "counts.csv"
    write_counts_csv(rows, path)
    _write_provenance(path, cfg, "report", [Path(args.counts).name])
    for r in rows:
        print(f"{r['image_id']}: all {r['all_vehicles']} ({_fmt(r['drop_all_pct'])}), "
              f"main {r['main_road_vehicles']} ({_fmt(r['drop_main_pct'])})")
    return EXIT_OK


def _fmt(v):
    return "baseline" if v is None else f"{v:+d}%"


def cmd_report(cfg: PipelineConfig, args) -> int:
    """Counts before/after shadow removal, dropping percentages, heatmaps, plot data."""
    out = _out_dir(cfg, args)
    if args.counts:
        return _report_from_counts(cfg, args, out)
    ctx = _Context(cfg)
    scenes = sorted(_scenes(ctx.manifest, "series"), key=lambda s: s.get("epoch", 0))
    if not scenes:
        raise DataError("empty series: no report emitted")
    det_dir = Path(args.detections) if args.detections else out
    dets = {}
    for s in scenes:
        path = det_dir / f"detections_{s['id']}.csv"
        if not path.is_file():
            raise DataError(f"missing detections for {s['id']}: {path}")
        dets[s["id"]] = read_detections(path)
    union_path = out / "shadow_union.grid"
    union = _load_mask(union_path) if union_path.is_file() else union_masks(
        _shadow_masks(ctx, scenes))
    imgs = {s["id"]: ctx.raster(s) for s in scenes}
    rows, series = [], {"epochs": [s["id"] for s in scenes]}
    for stage, erase in (("before_shadow_removal", False), ("after_shadow_removal", True)):
        counts = []
        for s in scenes:
            img = imgs[s["id"]]
            d = erase_in_shadow(dets[s["id"]], union) if erase else dets[s["id"]]
            counts.append(EpochCounts(s["id"], count_on_mask(d, ctx.road_mask(img)),
                                      count_on_mask(d, ctx.road_mask(img, main=True))))
            if erase:
                grid = block_density(d, img, cfg.number("stats", "block_size"))
                np.savetxt(out / f"blocks_{s['id']}.csv", grid.counts, fmt="%d", delimiter=",")
                write_heatmap(grid, out / f"blocks_{s['id']}.pgm")
        if counts[0].all_vehicles <= 0 or counts[0].main_road_vehicles <= 0:
            raise DataError("baseline epoch has no vehicles; percentages undefined")
        table = counts_table(counts, stage)
        rows += table
        series[stage] = {"all_vehicles": [r["all_vehicles"] for r in table],
                         "main_road_vehicles": [r["main_road_vehicles"] for r in table],
                         "drop_all_pct": [r["drop_all_pct"] for r in table],
                         "drop_main_pct": [r["drop_main_pct"] for r in table]}
    if "multipliers" in ctx.manifest:
        series["configured_multipliers"] = ctx.manifest["multipliers"]
    write_counts_csv(rows, out / "counts.csv")
    write_plot_manifest(series, out / "plot_series.json")
    _write_provenance(out / "counts.csv", cfg, "report", [s["id"] for s in scenes])
    for r in rows:
        print(f"{r['stage']} {r['image_id']}: all {r['all_vehicles']} "
              f"({_fmt(r['drop_all_pct'])}), main {r['main_road_vehicles']} "
              f"({_fmt(r['drop_main_pct'])})")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, args) -> int:
    ctx = _Context(cfg)
    out = _out_dir(cfg, args)
    det_dir = Path(args.detections) if args.detections else out
    scenes = (_scenes(ctx.manifest, image_id=args.image) if args.image
              else [s for s in ctx.manifest["scenes"] if s.get("truth")])
    region = _load_mask(Path(args.regions)) if args.regions else None
    reports, tp = {}, [0, 0, 0]
    for s in scenes:
        path = det_dir / f"detections_{s['id']}.csv"
        if not path.is_file():
            continue
        dets, labels = read_detections(path), ctx.truth(s).boxes
        if region is not None:
            dets, labels = within_region(dets, region), within_region(labels, region)
        m = match_detections(dets, labels, cfg.number("stats", "eval_iou"))
        reports[s["id"]] = precision_recall_f1(m.tp, m.fp, m.fn)
        tp = [tp[0] + m.tp, tp[1] + m.fp, tp[2] + m.fn]
    if not reports:
        raise DataError("no detections found to evaluate")
    reports["AVERAGE"] = precision_recall_f1(*tp)
    write_eval_csv(reports, out / "eval.csv")
    _write_provenance(out / "eval.csv", cfg, "eval", sorted(reports))
    for k, r in reports.items():
        print(f"{k}: precision {r.precision:.4f} recall {r.recall:.4f} f1 {r.f1:.4f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "finetune": cmd_finetune,
            "detect": cmd_detect, "shadowmask": cmd_shadowmask, "report": cmd_report,
            "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config (INI)")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out", help="output directory (overrides [paths] out)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="roadcount", description="Vehicle counting on road imagery.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate a synthetic run directory")
    sub.add_parser("train", parents=[common], help="train the classifier on training scenes")
    p = sub.add_parser("finetune", parents=[common], help="fine-tune on one image")
    p.add_argument("--image", help="manifest image id")
    p.add_argument("--epochs", type=int, help="overrides [train] finetune_epochs")
    p = sub.add_parser("detect", parents=[common], help="detect vehicles")
    p.add_argument("--image", help="manifest image id (default: every scene)")
    sub.add_parser("shadowmask", parents=[common], help="per-epoch and union shadow masks")
    p = sub.add_parser("report", parents=[common], help="counts, drops and block heatmaps")
    p.add_argument("--counts", help="counts CSV (image_id, all_vehicles, main_road_vehicles)")
    p.add_argument("--detections", help="directory of detections_<id>.csv (default: --out)")
    p = sub.add_parser("eval", parents=[common], help="precision/recall/F1 against truth")
    p.add_argument("--image", help="manifest image id (default: all with truth)")
    p.add_argument("--detections", help="directory of detections_<id>.csv (default: --out)")
    p.add_argument("--regions", help="GRID mask; only objects centered inside are evaluated")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.set("run", "seed", args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        args.threads = args.threads or cfg.threads
        # BLAS stays single-threaded; parallelism is over fixed chunks/tiles
        with threadpool_limits(1):
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"roadcount: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RasterFormatError, RoadFormatError, WeightsFormatError,
            InfeasibleDensityError, OSError, ValueError) as exc:
        print(f"roadcount: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"roadcount: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
