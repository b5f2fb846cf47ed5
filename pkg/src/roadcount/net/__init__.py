"""Multi-branch CNN vehicle/non-vehicle classifier written against numpy."""

from .model import Architecture, MultiBranchNet, NetworkWeights, WeightsFormatError
from .patches import PatchBatch, PatchTriple, SampleSet, extract_patch_triple, extract_patches
from .train import (AdamState, TrainConfig, TrainResult, adam_step, augment, class_weights,
                    classify, fine_tune, lr_at, predict_batch, train, weighted_bce)

__all__ = [
    "AdamState", "Architecture", "MultiBranchNet", "NetworkWeights", "PatchBatch",
    "PatchTriple", "SampleSet", "TrainConfig", "TrainResult", "WeightsFormatError",
    "adam_step", "augment", "class_weights", "classify", "extract_patch_triple",
    "extract_patches", "fine_tune", "lr_at", "predict_batch", "train", "weighted_bce",
]
