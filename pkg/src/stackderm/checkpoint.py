"""Flat little-endian binary containers for networks and SVM models.

Network files::

    b"SDNN" | version u32 | layer count u32
    per layer: kind tag u32 | tensor count u32
               per tensor: ndim u32 | dims u32 * ndim | float32 data

SVM files use the same framing with magic ``b"SSVM"``, a fixed scalar block
and float64 tensors.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .errors import ConfigError, DataError
from .nn.network import LayerKind, Network, NetworkSpec

VERSION = 1
KIND_TAGS = {LayerKind.INPUT: 0, LayerKind.CONV: 1, LayerKind.MAXPOOL: 2,
             LayerKind.DROPOUT: 3, LayerKind.DENSE: 4}


def _write_tensor(fh, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype(np.dtype(dtype).newbyteorder("<"), copy=False).tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError("truncated checkpoint")
    return buf


def _read_u32(fh, count=1):
    vals = struct.unpack(f"<{count}I", _read_exact(fh, 4 * count))
    return vals if count != 1 else vals[0]


def _read_tensor(fh, dtype):
    ndim = _read_u32(fh)
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    dt = np.dtype(dtype).newbyteorder("<")
    n = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, n * dt.itemsize), dtype=dt)
    return data.astype(dtype).reshape(shape)


def network_to_bytes(net: Network) -> bytes:
    fh = io.BytesIO()
    fh.write(b"SDNN")
    fh.write(struct.pack("<II", VERSION, len(net.spec.layers)))
    for layer, p in zip(net.spec.layers, net.params):
        tensors = [] if p is None else [p["W"], p["b"]]
        fh.write(struct.pack("<II", KIND_TAGS[layer.kind], len(tensors)))
        for t in tensors:
            _write_tensor(fh, t, np.float32)
    return fh.getvalue()


def network_from_bytes(buf: bytes, spec: NetworkSpec) -> Network:
    fh = io.BytesIO(buf)
    if _read_exact(fh, 4) != b"SDNN":
        raise DataError("not an SDNN checkpoint")
    version, n_layers = _read_u32(fh, 2)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if n_layers != len(spec.layers):
        raise ConfigError(f"checkpoint has {n_layers} layers, spec {spec.name} has "
                          f"{len(spec.layers)}")
    net = Network(spec, dtype=np.float32)
    for i, layer in enumerate(spec.layers):
        tag, count = _read_u32(fh, 2)
        if tag != KIND_TAGS[layer.kind]:
            raise ConfigError(f"layer {i}: checkpoint kind tag {tag} does not match spec")
        tensors = [_read_tensor(fh, np.float32) for _ in range(count)]
        if net.params[i] is None:
            if tensors:
                raise ConfigError(f"layer {i}: unexpected parameters in checkpoint")
            continue
        if len(tensors) != 2 or tensors[0].shape != net.params[i]["W"].shape:
            raise ConfigError(f"layer {i}: parameter shapes do not match spec")
        net.params[i] = {"W": tensors[0], "b": tensors[1]}
    return net


def save_network(net: Network, path):
    with open(path, "wb") as fh:
        fh.write(network_to_bytes(net))


def load_network(path, spec: NetworkSpec) -> Network:
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read(), spec)


# -- SVM ---------------------------------------------------------------------

_SVM_KINDS = ("linear", "poly", "rbf")


def svm_to_bytes(model) -> bytes:
    fh = io.BytesIO()
    fh.write(b"SSVM")
    k = model.kernel
    fh.write(struct.pack("<III", VERSION, _SVM_KINDS.index(k.kind), k.degree))
    fh.write(struct.pack("<ddddB", k.gamma, k.coef0, model.C, model.bias,
                         int(model.converged)))
    for arr in (model.support_vectors, model.dual_coefs, model.feature_means,
                model.feature_stds):
        _write_tensor(fh, arr, np.float64)
    return fh.getvalue()


def svm_from_bytes(buf: bytes):
    from .svm import KernelParams, SvmModel

    fh = io.BytesIO(buf)
    if _read_exact(fh, 4) != b"SSVM":
        raise DataError("not an SSVM model file")
    version, kind, degree = _read_u32(fh, 3)
    if version != VERSION:
        raise DataError(f"unsupported model version {version}")
    gamma, coef0, C, bias, conv = struct.unpack("<ddddB", _read_exact(fh, 33))
    sv, dual, means, stds = (_read_tensor(fh, np.float64) for _ in range(4))
    return SvmModel(sv, dual, bias, KernelParams(_SVM_KINDS[kind], gamma, degree, coef0),
                    C, means, stds, converged=bool(conv))


def save_svm(model, path):
    with open(path, "wb") as fh:
        fh.write(svm_to_bytes(model))


def load_svm(path):
    with open(path, "rb") as fh:
        return svm_from_bytes(fh.read())
