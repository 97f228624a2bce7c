"""Declarative layer specs and the trainable network built from them."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError, UsageError
from . import layers as L


class LayerKind(str, Enum):
    INPUT = "Input"
    CONV = "Convolutional"
    MAXPOOL = "MaxPooling"
    DROPOUT = "Dropout"
    DENSE = "FullyConnected"


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture table.

    ``units`` is the number of output channels for convolutions and the
    neuron count for dense layers. Input layers carry their shape in
    ``shape``.
    """

    kind: LayerKind
    kernel: tuple[int, int] | None = None
    units: int | None = None
    stride: tuple[int, int] | None = None
    activation: str | None = None
    dropout_rate: float | None = None
    shape: tuple[int, ...] | None = None


def Input(*shape):
    return LayerSpec(LayerKind.INPUT, shape=tuple(shape))


def Conv(units, kernel, activation="relu"):
    return LayerSpec(LayerKind.CONV, kernel=(kernel, kernel), units=units,
                     stride=(1, 1), activation=activation)


def MaxPool():
    return LayerSpec(LayerKind.MAXPOOL, kernel=(2, 2), stride=(2, 2))


def Dropout(rate):
    return LayerSpec(LayerKind.DROPOUT, dropout_rate=rate)


def Dense(units, activation="sigmoid"):
    return LayerSpec(LayerKind.DENSE, units=units, activation=activation)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]

    @property
    def input_shape(self):
        return self.layers[0].shape


def shape_trace(spec: NetworkSpec, input_shape=None) -> list[tuple[int, ...]]:
    """Output shape of every layer, starting with the input layer itself."""
    first = spec.layers[0]
    if first.kind is not LayerKind.INPUT:
        raise ConfigError("layer 0: network must start with an Input layer")
    if input_shape is None:
        input_shape = first.shape
    input_shape = tuple(input_shape)
    if first.shape is not None and tuple(first.shape) != input_shape:
        raise ConfigError(f"layer 0: input shape {input_shape} != declared {first.shape}")
    shapes = [input_shape]
    cur = input_shape
    for i, layer in enumerate(spec.layers[1:], start=1):
        if layer.kind is LayerKind.INPUT:
            raise ConfigError(f"layer {i}: Input layer only allowed at position 0")
        if layer.kind is LayerKind.CONV:
            if len(cur) != 3:
                raise ConfigError(f"layer {i}: convolution needs a (C, H, W) input, got {cur}")
            if layer.stride not in (None, (1, 1)):
                raise ConfigError(f"layer {i}: only stride (1, 1) convolutions are supported")
            if layer.kernel is None or min(layer.kernel) < 1:
                raise ConfigError(f"layer {i}: bad kernel {layer.kernel}")
            cur = (layer.units, cur[1], cur[2])
        elif layer.kind is LayerKind.MAXPOOL:
            if len(cur) != 3 or cur[1] % 2 or cur[2] % 2:
                raise ConfigError(f"layer {i}: max pooling needs even (C, H, W), got {cur}")
            cur = (cur[0], cur[1] // 2, cur[2] // 2)
        elif layer.kind is LayerKind.DROPOUT:
            rate = layer.dropout_rate or 0.0
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"layer {i}: dropout rate {rate} outside [0, 1)")
        elif layer.kind is LayerKind.DENSE:
            if not layer.units or layer.units < 1:
                raise ConfigError(f"layer {i}: dense layer needs a positive width")
            cur = (layer.units,)
        shapes.append(cur)
    return shapes


def _fans(layer, in_shape):
    if layer.kind is LayerKind.CONV:
        kh, kw = layer.kernel
        return in_shape[0] * kh * kw, layer.units * kh * kw
    return int(np.prod(in_shape)), layer.units


class Network:
    """Parameters plus forward/backward for a :class:`NetworkSpec`.

    Weights are ``(F, C, kh, kw)`` for convolutions and ``(m, n)`` for dense
    layers. Initialisation is He-uniform for ReLU layers and Glorot-uniform
    otherwise, with zero biases; each layer draws from its own stream seeded
    by ``(seed, layer index)``.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.shapes = shape_trace(spec)
        self.params: list[dict | None] = []
        for i, layer in enumerate(spec.layers):
            if layer.kind not in (LayerKind.CONV, LayerKind.DENSE):
                self.params.append(None)
                continue
            fan_in, fan_out = _fans(layer, self.shapes[i - 1])
            if layer.activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            rng = np.random.default_rng([self.seed, i])
            if layer.kind is LayerKind.CONV:
                wshape = (layer.units, self.shapes[i - 1][0], *layer.kernel)
            else:
                wshape = (layer.units, fan_in)
            w = rng.uniform(-limit, limit, size=wshape).astype(self.dtype)
            b = np.zeros(layer.units, dtype=self.dtype)
            self.params.append({"W": w, "b": b})
        self._cache = None

    # -- parameter helpers ---------------------------------------------------
    def param_items(self):
        """Yield ``(layer index, name, array)`` for every parameter tensor."""
        for i, p in enumerate(self.params):
            if p is not None:
                yield i, "W", p["W"]
                yield i, "b", p["b"]

    def n_params(self):
        return sum(a.size for _, _, a in self.param_items())

    def copy(self):
        new = copy.copy(self)
        new.params = [None if p is None else {k: v.copy() for k, v in p.items()}
                      for p in self.params]
        new._cache = None
        return new

    def astype(self, dtype):
        new = self.copy()
        new.dtype = np.dtype(dtype)
        new.params = [None if p is None else {k: v.astype(dtype) for k, v in p.items()}
                      for p in new.params]
        return new

    # -- passes ----------------------------------------------------------------
    def forward(self, x, train=False, rng=None):
        """Run a batch ``(B, *input_shape)`` through the stack.

        Returns ``(B, out_units)``. In train mode dropout draws from ``rng``;
        in infer mode no random numbers are consumed.
        """
        x = np.asarray(x, dtype=self.dtype)
        in_shape = self.shapes[0]
        if x.shape[1:] != in_shape:
            if x.shape == in_shape:
                x = x[None]
            else:
                raise ConfigError(f"input shape {x.shape[1:]} != network input {in_shape}")
        if train and rng is None:
            raise UsageError("train-mode forward needs an rng for dropout")
        h = x.transpose(0, 2, 3, 1) if x.ndim == 4 else x
        cache = []
        for i, layer in enumerate(self.spec.layers[1:], start=1):
            p = self.params[i]
            if layer.kind is LayerKind.CONV:
                z, c = L.conv_forward_nhwc(h, p["W"], p["b"])
                a = L.activate(z, layer.activation)
                cache.append((c, a))
                h = a
            elif layer.kind is LayerKind.MAXPOOL:
                h, c = L.maxpool_forward_nhwc(h)
                cache.append(c)
            elif layer.kind is LayerKind.DROPOUT:
                h, mask = L.dropout_forward(h, layer.dropout_rate or 0.0, train, rng)
                cache.append(mask)
            elif layer.kind is LayerKind.DENSE:
                flat_from = None
                if h.ndim == 4:
                    # flatten in (channel, row, column) order
                    flat_from = h.shape
                    h = h.transpose(0, 3, 1, 2).reshape(h.shape[0], -1)
                z = L.dense_forward_batch(h, p["W"], p["b"])
                a = L.activate(z, layer.activation)
                cache.append((h, a, flat_from))
                h = a
        self._cache = cache
        return h

    def backward(self, grad_out):
        """Reverse pass; returns a list aligned with ``params`` of gradient dicts."""
        if self._cache is None:
            raise UsageError("backward called without a preceding forward pass")
        cache = self._cache
        self._cache = None
        grads: list[dict | None] = [None] * len(self.params)
        g = np.asarray(grad_out, dtype=self.dtype)
        n = len(self.spec.layers)
        for i in range(n - 1, 0, -1):
            layer = self.spec.layers[i]
            c = cache[i - 1]
            first = i == 1
            if layer.kind is LayerKind.CONV:
                conv_cache, a = c
                g = L.activation_backward(g, a, layer.activation)
                gx, gw, gb = L.conv_backward_nhwc(g, self.params[i]["W"], conv_cache,
                                                   need_input_grad=not first)
                grads[i] = {"W": gw, "b": gb}
                g = gx
            elif layer.kind is LayerKind.MAXPOOL:
                g = L.maxpool_backward_nhwc(g, c)
            elif layer.kind is LayerKind.DROPOUT:
                g = L.dropout_backward(g, c)
            elif layer.kind is LayerKind.DENSE:
                x, a, flat_from = c
                g = L.activation_backward(g, a, layer.activation)
                gx, gw, gb = L.dense_backward_batch(g, x, self.params[i]["W"])
                grads[i] = {"W": gw, "b": gb}
                g = gx
                if flat_from is not None:
                    b_, h_, w_, c_ = flat_from
                    g = g.reshape(b_, c_, h_, w_).transpose(0, 2, 3, 1)
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient at layer {i}")
        return grads

    def predict(self, x, batch_size=64):
        """Infer-mode scores of the first output unit, shape ``(B,)``."""
        x = np.asarray(x)
        out = [self.forward(x[s:s + batch_size])[:, 0]
               for s in range(0, len(x), batch_size)]
        self._cache = None
        if not out:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate(out)
