"""Minimal NHWC layers with hand-written backward passes.

Each layer reads its parameters from a shared ``params`` dict keyed by
``"<name>.w"`` / ``"<name>.b"``.  ``forward(..., train=True)`` keeps the
cache needed by ``backward``; inference calls keep no state, so one layer
object can serve several threads.  All layers follow the input dtype.
"""

from __future__ import annotations

import numpy as np


class Layer:
    name = ""
    param_shapes: dict = {}

    def forward(self, x, params, train=False):
        raise NotImplementedError

    def backward(self, dy):
        """Return ``(dx, grads)``; ``grads`` maps parameter names to arrays."""
        raise NotImplementedError


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1.

    Computed as nine shifted matrix products, which on small channel counts
    is much cheaper than materializing an im2col matrix.  A first layer can
    set ``input_grad=False`` to skip the unused input gradient.
    """

    def __init__(self, name, c_in, c_out, input_grad=True):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.input_grad = input_grad
        self.param_shapes = {f"{name}.w": (3, 3, c_in, c_out), f"{name}.b": (c_out,)}
        self._cache = None

    def forward(self, x, params, train=False):
        n, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"{self.name}: expected {self.c_in} channels, got {c}")
        kernel = params[f"{self.name}.w"]
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        y = np.empty((n, h, w, self.c_out), dtype=np.result_type(x, kernel))
        y[...] = params[f"{self.name}.b"]
        for i in range(3):
            for j in range(3):
                y += xp[:, i:i + h, j:j + w, :] @ kernel[i, j]
        if train:
            self._cache = (xp, kernel)
        return y

    def backward(self, dy):
        xp, kernel = self._cache
        n, h, w, _ = dy.shape
        c = self.c_in
        dy2 = dy.reshape(-1, self.c_out)
        dw = np.empty_like(kernel)
        for i in range(3):
            for j in range(3):
                shifted = np.ascontiguousarray(xp[:, i:i + h, j:j + w, :]).reshape(-1, c)
                dw[i, j] = shifted.T @ dy2
        grads = {f"{self.name}.w": dw, f"{self.name}.b": dy2.sum(axis=0)}
        if not self.input_grad:
            return None, grads
        dxp = np.zeros(xp.shape, dtype=dy.dtype)
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dy @ kernel[i, j].T
        return dxp[:, 1:-1, 1:-1, :], grads


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, params, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask, {}


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; ties route the gradient to the first maximum."""

    def __init__(self):
        self._cache = None

    def forward(self, x, params, train=False):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {(h, w)}")
        blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
        if train:
            self._cache = (np.argmax(blocks, axis=-1), x.shape)
        return blocks.max(axis=-1)

    def backward(self, dy):
        arg, (n, h, w, c) = self._cache
        grad = np.zeros(dy.shape + (4,), dtype=dy.dtype)
        np.put_along_axis(grad, arg[..., None], dy[..., None], axis=-1)
        grad = grad.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return grad.reshape(n, h, w, c), {}


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, params, train=False):
        if train:
            self._shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, dy):
        return dy.reshape(self._shape), {}


class Dense(Layer):
    def __init__(self, name, n_in, n_out):
        self.name, self.n_in, self.n_out = name, n_in, n_out
        self.param_shapes = {f"{name}.w": (n_in, n_out), f"{name}.b": (n_out,)}
        self._cache = None

    def forward(self, x, params, train=False):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected {self.n_in} features, got {x.shape[-1]}")
        w = params[f"{self.name}.w"]
        if train:
            self._cache = (x, w)
        return x @ w + params[f"{self.name}.b"]

    def backward(self, dy):
        x, w = self._cache
        grads = {f"{self.name}.w": x.T @ dy, f"{self.name}.b": dy.sum(axis=0)}
        return dy @ w.T, grads


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)
        self.param_shapes = {}
        for layer in self.layers:
            self.param_shapes.update(layer.param_shapes)

    def forward(self, x, params, train=False):
        for layer in self.layers:
            x = layer.forward(x, params, train)
        return x

    def backward(self, dy):
        grads = {}
        for layer in reversed(self.layers):
            dy, g = layer.backward(dy)
            grads.update(g)
        return dy, grads


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
