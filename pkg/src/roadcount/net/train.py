"""Loss, optimizer, schedule and the three-phase training procedure."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Architecture, MultiBranchNet, NetworkWeights
from .patches import PatchBatch, SampleSet, extract_patches, flip_batch

log = logging.getLogger(__name__)

PRED_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    epochs: int = 100
    warmup_epochs: int = 20
    lr_start: float = 1e-4
    lr_max: float = 1e-3
    window_lr_start: float = 1e-5
    window_lr_max: float = 1e-4
    joint_lr_start: float = 1e-5
    joint_lr_max: float = 1e-4
    decay: float = 0.8
    flip_probability: float = 0.5
    freeze_branches: bool = False
    weighted: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be in [0, epochs)")


def lr_at(epoch: int, cfg: TrainConfig, start: float | None = None,
          peak: float | None = None) -> float:
    """Linear warmup from ``start`` to ``peak``, then x``decay`` per epoch."""
    start = cfg.lr_start if start is None else start
    peak = cfg.lr_max if peak is None else peak
    if epoch <= cfg.warmup_epochs:
        if cfg.warmup_epochs == 0:
            return peak
        f = epoch / cfg.warmup_epochs
        return start * (1 - f) + peak * f
    lr = peak
    for _ in range(epoch - cfg.warmup_epochs):
        lr *= cfg.decay
    return lr


def class_weights(n_v: int, n_n: int) -> tuple[float, float]:
    """(vehicle weight, non-vehicle weight) balancing the two classes."""
    total = n_v + n_n
    return total / (2 * n_v), total / (2 * n_n)


def weighted_bce(pred, label, n_v: int, n_n: int):
    pred = np.clip(np.asarray(pred, dtype=np.float64), PRED_CLAMP, 1 - PRED_CLAMP)
    label = np.asarray(label, dtype=np.float64)
    w_v, w_n = class_weights(n_v, n_n)
    w = np.where(label == 1, w_v, w_n)
    return w * (-label * np.log(pred) - (1 - label) * np.log(1 - pred))


def bce(pred, label):
    pred = np.clip(np.asarray(pred, dtype=np.float64), PRED_CLAMP, 1 - PRED_CLAMP)
    label = np.asarray(label, dtype=np.float64)
    return -label * np.log(pred) - (1 - label) * np.log(1 - pred)


def logit_loss(z, labels, sample_weights):
    """Mean weighted BCE of sigmoid(z) and its gradient w.r.t. the logits."""
    z64 = z.astype(np.float64)
    p = 1.0 / (1.0 + np.exp(-z64))
    pc = np.clip(p, PRED_CLAMP, 1 - PRED_CLAMP)
    per = sample_weights * (-labels * np.log(pc) - (1 - labels) * np.log(1 - pc))
    n = len(z)
    dz = sample_weights * (p - labels) / n
    return float(per.sum() / n), dz.astype(z.dtype)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """In-place Adam update of the parameters that have gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


def draw_flips(n: int, rng: np.random.Generator, probability: float = 0.5):
    horizontal = rng.random(n) < probability
    vertical = rng.random(n) < probability
    return horizontal, vertical


def augment(batch: PatchBatch, rng: np.random.Generator, probability: float = 0.5) -> PatchBatch:
    """Independent horizontal/vertical flips per sample, shared by its three patches."""
    horizontal, vertical = draw_flips(len(batch), rng, probability)
    if probability <= 0:
        return batch
    return flip_batch(batch, horizontal, vertical)


@dataclass
class TraceEntry:
    phase: str
    head: str
    epoch: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    weights: NetworkWeights
    trace: list[TraceEntry]


def _run_phase(net, weights, samples, cfg, heads, lr_range, epochs, rng, trace, phase):
    params = weights.params
    if cfg.weighted:
        w_v, w_n = class_weights(samples.n_v, samples.n_n)
    else:
        w_v = w_n = 1.0
    labels = samples.labels.astype(np.float64)
    sample_w = np.where(labels == 1, w_v, w_n)
    states = {h: AdamState() for h in heads}
    trainable = {}
    for h in heads:
        names = net.head_params(h)
        if h == "joint" and cfg.freeze_branches:
            names = [n for n in names if n.startswith("joint.")]
        trainable[h] = set(names)
    n = len(samples)
    cached = None
    if heads == ("joint",) and cfg.freeze_branches:
        cached = _flip_features(net, params, samples.patches)
    for epoch in range(epochs):
        lr = lr_at(epoch, cfg, *lr_range)
        order = rng.permutation(n)
        totals = dict.fromkeys(heads, 0.0)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cached is not None:
                horizontal, vertical = draw_flips(len(idx), rng, cfg.flip_probability)
                feats = cached[horizontal + 2 * vertical, idx]
            else:
                batch = augment(samples.patches.take(idx), rng, cfg.flip_probability)
            for h in heads:
                if cached is not None:
                    z = net.head_logits(params, feats, h, train=True)
                else:
                    z = net.logits(params, batch, h, train=True)
                loss, dz = logit_loss(z, labels[idx], sample_w[idx])
                grads = {k: g for k, g in net.backward(dz).items() if k in trainable[h]}
                adam_step(params, grads, states[h], lr)
                totals[h] += loss * len(idx)
        for h in heads:
            trace.append(TraceEntry(phase, h, epoch, lr, totals[h] / n))
            log.info("%s/%s epoch %d lr %.2e loss %.5f", phase, h, epoch, lr, totals[h] / n)


def _flip_features(net, params, patches: PatchBatch, chunk: int = 256) -> np.ndarray:
    """Frozen-branch features of every sample under each flip, indexed [h + 2v, sample]."""
    n = len(patches)
    out = []
    for code in range(4):
        horizontal = np.full(n, bool(code & 1))
        vertical = np.full(n, bool(code & 2))
        flipped = flip_batch(patches, horizontal, vertical)
        out.append(np.concatenate([net.features(params, flipped.take(slice(s, s + chunk)))
                                   for s in range(0, n, chunk)]))
    return np.stack(out)


def train(samples: SampleSet, cfg: TrainConfig = TrainConfig(),
          arch: Architecture | None = None) -> TrainResult:
    """Pretrain the patch branches, then the window branch, then the joint head."""
    if samples.n_v < 1 or samples.n_n < 1:
        raise ValueError("training needs at least one vehicle and one non-vehicle sample")
    bands = samples.patches.window.shape[-1]
    arch = arch or Architecture(bands=bands)
    if arch.bands != bands:
        raise ValueError(f"architecture expects {arch.bands} bands, samples have {bands}")
    weights = NetworkWeights.initialize(arch, cfg.seed)
    weights.set_normalization(samples.norm_mean, samples.norm_std)
    net = MultiBranchNet(arch)
    rng = np.random.default_rng(cfg.seed)
    trace: list[TraceEntry] = []
    _run_phase(net, weights, samples, cfg, ("subwindow", "anchor"),
               (cfg.lr_start, cfg.lr_max), cfg.epochs, rng, trace, "pretrain_patch")
    _run_phase(net, weights, samples, cfg, ("window",),
               (cfg.window_lr_start, cfg.window_lr_max), cfg.epochs, rng, trace, "pretrain_window")
    _run_phase(net, weights, samples, cfg, ("joint",),
               (cfg.joint_lr_start, cfg.joint_lr_max), cfg.epochs, rng, trace, "joint")
    return TrainResult(weights, trace)


def fine_tune(weights: NetworkWeights, samples: SampleSet, cfg: TrainConfig = TrainConfig(),
              epochs: int | None = None) -> TrainResult:
    """Continue joint training on image-specific samples; normalization stays frozen."""
    weights = weights.copy()
    epochs = cfg.epochs if epochs is None else epochs
    trace: list[TraceEntry] = []
    if epochs == 0:
        return TrainResult(weights, trace)
    if samples.n_v < 1 or samples.n_n < 1:
        raise ValueError("fine-tuning needs both classes")
    net = MultiBranchNet(weights.arch)
    rng = np.random.default_rng(cfg.seed)
    _run_phase(net, weights, samples, cfg, ("joint",),
               (cfg.joint_lr_start, cfg.joint_lr_max), epochs, rng, trace, "finetune")
    return TrainResult(weights, trace)


def predict_batch(weights: NetworkWeights, batch: PatchBatch, head="joint",
                  chunk: int = 256, threads: int = 1) -> np.ndarray:
    """Probabilities in fixed-size chunks so results do not depend on ``threads``."""
    net = MultiBranchNet(weights.arch)
    starts = list(range(0, len(batch), chunk))

    def run(s):
        return net.predict(weights.params, batch.take(slice(s, s + chunk)), head)

    if not starts:
        return np.zeros(0, dtype=np.float32)
    if threads <= 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    return np.concatenate(parts)


def classify(weights: NetworkWeights, img, anchors, threshold: float = 0.5,
             chunk: int = 256, threads: int = 1):
    """(anchor, probability) pairs whose joint-head probability exceeds ``threshold``."""
    anchors = list(anchors)
    if not anchors:
        return []
    probs = []
    for s in range(0, len(anchors), chunk * max(1, threads)):
        part = anchors[s:s + chunk * max(1, threads)]
        probs.append(predict_batch(weights, extract_patches(img, part), chunk=chunk,
                                   threads=threads))
    # float32 sigmoids saturate to exactly 0 or 1; keep probabilities open-interval
    probs = np.clip(np.concatenate(probs).astype(np.float64), PRED_CLAMP, 1 - PRED_CLAMP)
    return [(a, float(p)) for a, p in zip(anchors, probs) if p > threshold]
