"""Pipeline configuration: sectioned key = value text (INI).

Every constant of the method is a key.  Keys without a method-given value
(hat and NDVI thresholds, shadow threshold) have no default and must be set
or, for the hat/NDVI thresholds, set to ``otsu``.  Relative paths resolve
against the directory of the config file.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .candidates import AnchorConfig, ShapeRules
from .net.model import Architecture
from .net.train import TrainConfig
from .pipeline import DetectConfig
from .synth import DEFAULT_MULTIPLIERS, SceneConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "paths": {
        "manifest": "", "weights": "", "samples": "", "out": "",
    },
    "thresholds": {
        "tophat": "", "bottomhat": "", "ndvi": "", "shadow": "",
        "classifier": "0.5",
    },
    "morphology": {"se_size": "7", "tile_rows": "128"},
    "bands": {"red": "2", "nir": "3", "rgb": "2, 1, 0", "shadow_max_value": ""},
    "candidates": {"adjacency_threshold": "0.30"},
    "shape": {
        "min_area": "2", "max_area": "200", "max_length": "28", "max_width": "9",
        "max_elongation": "8", "min_hull_fill": "0.9", "min_box_fill": "0.55",
    },
    "anchors": {
        "zoom_length": "1, 1.5, 2", "zoom_width": "1, 1.25, 1.5", "square_aspect": "0.6",
    },
    "nms": {"iou": "0.3", "ioa": "0.7", "prob_band": "0.05"},
    "roads": {"buffer": "20", "main_buffer": "40"},
    "stats": {"block_size": "300", "eval_iou": "0.3"},
    "shadow": {"close_size": "3", "open_size": "7"},
    "train": {
        "batch_size": "200", "epochs": "100", "warmup_epochs": "20",
        "lr_start": "1e-4", "lr_max": "1e-3",
        "window_lr_start": "1e-5", "window_lr_max": "1e-4",
        "joint_lr_start": "1e-5", "joint_lr_max": "1e-4",
        "decay": "0.8", "flip_probability": "0.5", "freeze_branches": "false",
        "weighted": "true", "conv_widths": "64, 128, 256", "window_fc": "4096",
        "patch_fc": "2048", "joint_fc": "4096", "max_samples": "2000",
        "positive_fraction": "0.4", "pos_iou": "0.5", "neg_iou": "0.2",
        "finetune_epochs": "100",
    },
    "synth": {
        "rows": "512", "cols": "512", "resolution": "1.0", "vehicle_density": "55",
        "multipliers": ", ".join(str(m) for m in DEFAULT_MULTIPLIERS),
        "building_shadows": "7, 7, 7, 7, 3", "train_scenes": "4", "heldout_scenes": "1",
        "noise_sigma": "0.004",
    },
    "run": {"seed": "0", "threads": "1"},
}

# Values ``synth`` writes into a run's config for desk-scale (single core,
# ~2000 samples) runs; keys the user set explicitly are left alone.
DESK_PROFILE = {
    "thresholds": {"tophat": "0.25", "bottomhat": "0.12", "ndvi": "0.4", "shadow": "1.3"},
    "train": {"conv_widths": "8, 16, 32", "window_fc": "128", "patch_fc": "64",
              "joint_fc": "128", "epochs": "40", "warmup_epochs": "20",
              "freeze_branches": "true", "finetune_epochs": "40"},
}


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


@dataclass
class PipelineConfig:
    parser: configparser.ConfigParser
    base_dir: Path
    source: str = ""
    user_keys: set = field(default_factory=set)   # (section, key) set in the file

    # raw access -----------------------------------------------------------
    def get(self, section, key) -> str:
        return self.parser.get(section, key).strip()

    def _number(self, section, key, kind=float):
        text = self.get(section, key)
        try:
            value = kind(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {text!r} is not a number") from None
        if not math.isfinite(value):
            raise ConfigError(f"[{section}] {key} must be finite")
        return value

    def number(self, section, key) -> float:
        return self._number(section, key, float)

    def integer(self, section, key) -> int:
        return self._number(section, key, int)

    def flag(self, section, key) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} is not a boolean") from None

    def path(self, key, required=True) -> Path | None:
        text = self.get("paths", key)
        if not text:
            if required:
                raise ConfigError(f"[paths] {key} is not set")
            return None
        p = Path(text)
        return p if p.is_absolute() else self.base_dir / p

    def threshold(self, key, allow_otsu=True):
        text = self.get("thresholds", key)
        if not text:
            raise ConfigError(f"[thresholds] {key} must be set"
                              + (" (a number or 'otsu')" if allow_otsu else ""))
        if allow_otsu and text.lower() == "otsu":
            return "otsu"
        return self._number("thresholds", key)

    # typed views -----------------------------------------------------------
    @property
    def seed(self) -> int:
        return self.integer("run", "seed")

    @property
    def threads(self) -> int:
        return max(1, self.integer("run", "threads"))

    def shape_rules(self) -> ShapeRules:
        s = "shape"
        return ShapeRules(self.number(s, "min_area"), self.number(s, "max_area"),
                          self.number(s, "max_length"), self.number(s, "max_width"),
                          self.number(s, "max_elongation"), self.number(s, "min_hull_fill"),
                          self.number(s, "min_box_fill"))

    def anchor_config(self) -> AnchorConfig:
        return AnchorConfig(_floats(self.get("anchors", "zoom_length")),
                            _floats(self.get("anchors", "zoom_width")),
                            self.number("anchors", "square_aspect"))

    def detect_config(self) -> DetectConfig:
        return DetectConfig(
            tophat_threshold=self.threshold("tophat"),
            bottomhat_threshold=self.threshold("bottomhat"),
            ndvi_threshold=self.threshold("ndvi"),
            se_size=self.integer("morphology", "se_size"),
            red_band=self.integer("bands", "red"),
            nir_band=self.integer("bands", "nir"),
            adjacency_threshold=self.number("candidates", "adjacency_threshold"),
            shape=self.shape_rules(),
            anchors=self.anchor_config(),
            classifier_threshold=self.number("thresholds", "classifier"),
            iou_threshold=self.number("nms", "iou"),
            ioa_threshold=self.number("nms", "ioa"),
            prob_band=self.number("nms", "prob_band"),
            tile_rows=self.integer("morphology", "tile_rows"),
        )

    def train_config(self) -> TrainConfig:
        t = "train"
        try:
            return TrainConfig(
                batch_size=self.integer(t, "batch_size"), epochs=self.integer(t, "epochs"),
                warmup_epochs=self.integer(t, "warmup_epochs"),
                lr_start=self.number(t, "lr_start"), lr_max=self.number(t, "lr_max"),
                window_lr_start=self.number(t, "window_lr_start"),
                window_lr_max=self.number(t, "window_lr_max"),
                joint_lr_start=self.number(t, "joint_lr_start"),
                joint_lr_max=self.number(t, "joint_lr_max"),
                decay=self.number(t, "decay"),
                flip_probability=self.number(t, "flip_probability"),
                freeze_branches=self.flag(t, "freeze_branches"),
                weighted=self.flag(t, "weighted"), seed=self.seed)
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None

    def architecture(self, bands: int) -> Architecture:
        widths = _ints(self.get("train", "conv_widths"))
        if len(widths) != 3 or min(widths) < 1:
            raise ConfigError("[train] conv_widths needs three positive integers")
        return Architecture(bands, widths, self.integer("train", "window_fc"),
                            self.integer("train", "patch_fc"), self.integer("train", "joint_fc"))

    def rgb_bands(self) -> tuple[int, int, int]:
        rgb = _ints(self.get("bands", "rgb"))
        if len(rgb) != 3:
            raise ConfigError("[bands] rgb needs three band indices")
        return rgb

    def shadow_max_value(self) -> float | None:
        text = self.get("bands", "shadow_max_value")
        return None if not text else self.number("bands", "shadow_max_value")

    def scene_config(self) -> SceneConfig:
        s = "synth"
        return SceneConfig(rows=self.integer(s, "rows"), cols=self.integer(s, "cols"),
                           resolution=self.number(s, "resolution"),
                           vehicle_density=self.number(s, "vehicle_density"),
                           noise_sigma=self.number(s, "noise_sigma"), seed=self.seed)

    def multipliers(self) -> tuple[float, ...]:
        return _floats(self.get("synth", "multipliers"))

    def shadow_counts(self) -> tuple[int, ...]:
        counts = _ints(self.get("synth", "building_shadows"))
        if len(counts) != len(self.multipliers()):
            raise ConfigError("[synth] building_shadows needs one count per multiplier")
        return counts

    # provenance ------------------------------------------------------------
    def canonical(self) -> str:
        """Every resolved key, sorted; identical configs give identical text."""
        lines = []
        for section in sorted(self.parser.sections()):
            for key in sorted(self.parser[section]):
                lines.append(f"{section}.{key}={self.parser[section][key].strip()}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def set(self, section, key, value) -> None:
        if not self.parser.has_section(section):
            raise ConfigError(f"unknown section [{section}]")
        self.parser.set(section, key, str(value))

    def apply_profile(self, profile: dict) -> None:
        """Set every profile key the config file did not set itself."""
        for section, values in profile.items():
            for key, value in values.items():
                if (section, key) not in self.user_keys:
                    self.set(section, key, value)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            self.parser.write(fh)


def _parser():
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    return parser


def default_config(base_dir=".") -> PipelineConfig:
    return PipelineConfig(_parser(), Path(base_dir))


def load_config(path=None) -> PipelineConfig:
    """Defaults overlaid with ``path``; unknown sections or keys are errors."""
    if path is None:
        return default_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    user = configparser.ConfigParser(interpolation=None)
    try:
        user.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    parser = _parser()
    user_keys = set()
    for section in user.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in user[section].items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            parser.set(section, key, value)
            user_keys.add((section, key))
    return PipelineConfig(parser, path.resolve().parent, str(path), user_keys)
