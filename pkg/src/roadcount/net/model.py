"""Three-branch patch classifier and its weights container.

Branches (all convs 3x3 + ReLU, pools 2x2):

* window (48x48): 2 x c1, pool, 2 x c2, pool, 2 x c3, pool  -> 6*6*c3 features
* subwindow, anchor (12x24): 2 x c1, pool, 2 x c2, pool      -> 3*6*c2 features

Each branch has a pretraining head (fc, fc, fc-1); the joint head
concatenates all three feature vectors (fc, fc, fc-1).  Sigmoid outputs.
Default widths follow the VGG-style configuration (64/128/256 channels,
4096/2048 pretraining fc, 4096 joint fc); narrower widths keep the same
topology for desk-scale runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import Conv3x3, Dense, Flatten, MaxPool2, ReLU, Sequential, sigmoid

WEIGHTS_MAGIC = b"NETW1"
BRANCHES = ("window", "subwindow", "anchor")
HEADS = BRANCHES + ("joint",)


class WeightsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    bands: int = 4
    conv_widths: tuple[int, int, int] = (64, 128, 256)
    window_fc: int = 4096
    patch_fc: int = 2048
    joint_fc: int = 4096

    @property
    def window_features(self) -> int:
        return 6 * 6 * self.conv_widths[2]

    @property
    def patch_features(self) -> int:
        return 3 * 6 * self.conv_widths[1]

    def feature_length(self, branch: str) -> int:
        return self.window_features if branch == "window" else self.patch_features

    def head_width(self, head: str) -> int:
        return {"window": self.window_fc, "subwindow": self.patch_fc,
                "anchor": self.patch_fc, "joint": self.joint_fc}[head]


def _branch(name, arch: Architecture) -> Sequential:
    blocks = 3 if name == "window" else 2
    layers, c_in, k = [], arch.bands, 1
    for width in arch.conv_widths[:blocks]:
        for _ in range(2):
            layers += [Conv3x3(f"{name}.conv{k}", c_in, width, input_grad=k > 1), ReLU()]
            c_in, k = width, k + 1
        layers.append(MaxPool2())
    layers.append(Flatten())
    return Sequential(layers)


def _head(name, n_in, width) -> Sequential:
    return Sequential([Dense(f"{name}.fc1", n_in, width), ReLU(),
                       Dense(f"{name}.fc2", width, width), ReLU(),
                       Dense(f"{name}.fc3", width, 1)])


class MultiBranchNet:
    """Layer graph for one architecture; parameters live outside it."""

    def __init__(self, arch: Architecture):
        self.arch = arch
        self.branches = {b: _branch(b, arch) for b in BRANCHES}
        self.heads = {b: _head(f"{b}_head", arch.feature_length(b), arch.head_width(b))
                      for b in BRANCHES}
        joint_in = sum(arch.feature_length(b) for b in BRANCHES)
        self.heads["joint"] = _head("joint", joint_in, arch.joint_fc)
        self._last = None

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for part in list(self.branches.values()) + list(self.heads.values()):
            shapes.update(part.param_shapes)
        shapes["norm.mean"] = (self.arch.bands,)
        shapes["norm.std"] = (self.arch.bands,)
        return shapes

    def head_params(self, head: str) -> list[str]:
        """Trainable parameter names reached by ``head``."""
        parts = [self.heads[head]]
        parts += [self.branches[b] for b in (BRANCHES if head == "joint" else (head,))]
        return [n for p in parts for n in p.param_shapes]

    def _inputs(self, params, batch, branches):
        mean, std = params["norm.mean"], params["norm.std"]
        return {b: ((getattr(batch, b) - mean) / std).astype(mean.dtype, copy=False)
                for b in branches}

    def logits(self, params, batch, head="joint", train=False) -> np.ndarray:
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        used = BRANCHES if head == "joint" else (head,)
        inputs = self._inputs(params, batch, used)
        feats = [self.branches[b].forward(inputs[b], params, train) for b in used]
        x = np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0]
        z = self.heads[head].forward(x, params, train)[:, 0]
        if train:
            self._last = (head, used, [f.shape[1] for f in feats])
        return z

    def features(self, params, batch, head="joint") -> np.ndarray:
        """Branch outputs feeding ``head``, concatenated (inference only)."""
        used = BRANCHES if head == "joint" else (head,)
        inputs = self._inputs(params, batch, used)
        return np.concatenate([self.branches[b].forward(inputs[b], params) for b in used], axis=1)

    def head_logits(self, params, feats, head="joint", train=False) -> np.ndarray:
        """Logits from precomputed features; ``backward`` then stops at the head."""
        z = self.heads[head].forward(feats, params, train)[:, 0]
        if train:
            self._last = (head, (), [])
        return z

    def predict(self, params, batch, head="joint") -> np.ndarray:
        return sigmoid(self.logits(params, batch, head))

    def backward(self, dz) -> dict[str, np.ndarray]:
        """Gradients of the last ``train=True`` call given d(loss)/d(logits)."""
        head, used, sizes = self._last
        dx, grads = self.heads[head].backward(dz[:, None])
        if not used:
            return grads
        for b, part in zip(used, np.split(dx, np.cumsum(sizes)[:-1], axis=1)):
            _, g = self.branches[b].backward(part)
            grads.update(g)
        return grads


@dataclass
class NetworkWeights:
    arch: Architecture
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(cls, arch: Architecture = Architecture(), seed: int = 0,
                   dtype=np.float32) -> "NetworkWeights":
        """He-normal weights, zero biases, identity input normalization."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in MultiBranchNet(arch).param_shapes().items():
            if name == "norm.mean" or name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            elif name == "norm.std":
                params[name] = np.ones(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[:-1]))
                params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        return cls(arch, params)

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(self.arch, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "NetworkWeights":
        return NetworkWeights(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    def set_normalization(self, mean, std) -> None:
        dtype = self.params["norm.mean"].dtype
        self.params["norm.mean"] = np.asarray(mean, dtype=dtype).reshape(self.arch.bands)
        self.params["norm.std"] = np.asarray(std, dtype=dtype).reshape(self.arch.bands)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(WEIGHTS_MAGIC)
            for name in sorted(self.params):
                value = np.asarray(self.params[name], dtype="<f4")
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", value.ndim))
                fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
                fh.write(value.tobytes())

    @classmethod
    def load(cls, path) -> "NetworkWeights":
        data = Path(path).read_bytes()
        if not data.startswith(WEIGHTS_MAGIC):
            raise WeightsFormatError(f"{path}: missing NETW1 magic")
        pos, params = len(WEIGHTS_MAGIC), {}
        try:
            while pos < len(data):
                (n,) = struct.unpack_from("<I", data, pos)
                name = data[pos + 4:pos + 4 + n].decode("utf-8")
                pos += 4 + n
                (rank,) = struct.unpack_from("<I", data, pos)
                dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
                pos += 4 + 4 * rank
                count = int(np.prod(dims)) if rank else 1
                if pos + 4 * count > len(data):
                    raise WeightsFormatError(f"{path}: truncated record {name!r}")
                params[name] = np.frombuffer(data, "<f4", count, pos).reshape(dims).astype(np.float32)
                pos += 4 * count
        except struct.error as exc:
            raise WeightsFormatError(f"{path}: truncated weights file") from exc
        arch = _infer_architecture(params, path)
        expected = MultiBranchNet(arch).param_shapes()
        if set(expected) != set(params):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise WeightsFormatError(f"{path}: layer set mismatch, missing={missing} extra={extra}")
        for name, shape in expected.items():
            if params[name].shape != tuple(shape):
                raise WeightsFormatError(
                    f"{path}: {name} has shape {params[name].shape}, expected {tuple(shape)}")
        return cls(arch, params)


def _infer_architecture(params, path) -> Architecture:
    try:
        return Architecture(
            bands=params["window.conv1.w"].shape[2],
            conv_widths=(params["window.conv2.w"].shape[3], params["window.conv4.w"].shape[3],
                         params["window.conv6.w"].shape[3]),
            window_fc=params["window_head.fc1.w"].shape[1],
            patch_fc=params["subwindow_head.fc1.w"].shape[1],
            joint_fc=params["joint.fc1.w"].shape[1])
    except (KeyError, IndexError) as exc:
        raise WeightsFormatError(f"{path}: cannot infer architecture ({exc})") from exc
