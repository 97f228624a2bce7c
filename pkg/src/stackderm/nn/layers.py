"""Forward and backward kernels for the five layer kinds.

Batched kernels work on channels-last arrays ``(B, H, W, C)`` because the
shifted-slice im2col is much cheaper in that layout. The single-sample
functions at the bottom take the ``(C, H, W)`` layout used everywhere else
and are thin wrappers over the batched ones.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ConfigError

BCE_EPS = 1e-7


def same_padding(k: int) -> tuple[int, int]:
    """Asymmetric zero padding that keeps the spatial size at stride 1."""
    before = (k - 1) // 2
    return before, k - 1 - before


# -- convolution -------------------------------------------------------------

def _im2col(x, kh, kw, pad_h, pad_w):
    b, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), pad_h, pad_w, (0, 0)))
    cols = np.concatenate(
        [xp[:, i:i + h, j:j + w, :] for i in range(kh) for j in range(kw)], axis=-1
    )
    return cols.reshape(b * h * w, -1)


def conv_forward_nhwc(x, weights, bias, pad_h=None, pad_w=None):
    """Stride-1 cross-correlation with zero padding.

    ``weights`` has shape ``(F, C, kh, kw)``. Returns the output and the
    cache needed by :func:`conv_backward_nhwc`.
    """
    f, c, kh, kw = weights.shape
    if x.shape[-1] != c:
        raise ConfigError(f"conv expects {c} input channels, got {x.shape[-1]}")
    pad_h = same_padding(kh) if pad_h is None else pad_h
    pad_w = same_padding(kw) if pad_w is None else pad_w
    b, h, w, _ = x.shape
    cols = _im2col(x, kh, kw, pad_h, pad_w)
    # column order in cols is (i, j, c); match it in the weight matrix
    wmat = weights.transpose(2, 3, 1, 0).reshape(kh * kw * c, f)
    out = (cols @ wmat).reshape(b, h, w, f)
    out += bias
    return out, (cols, x.shape, weights.shape, pad_h, pad_w)


def conv_backward_nhwc(grad_out, weights, cache, need_input_grad=True):
    cols, xshape, wshape, pad_h, pad_w = cache
    f, c, kh, kw = wshape
    b, h, w, _ = xshape
    g = grad_out.reshape(b * h * w, f)
    gw = (cols.T @ g).reshape(kh, kw, c, f).transpose(3, 2, 0, 1)
    gb = g.sum(axis=0)
    if not need_input_grad:
        return None, np.ascontiguousarray(gw), gb
    wmat = weights.transpose(2, 3, 1, 0).reshape(kh * kw * c, f)
    gcols = (g @ wmat.T).reshape(b, h, w, kh * kw, c)
    gxp = np.zeros((b, h + sum(pad_h), w + sum(pad_w), c), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + h, j:j + w, :] += gcols[:, :, :, i * kw + j, :]
    gx = gxp[:, pad_h[0]:pad_h[0] + h, pad_w[0]:pad_w[0] + w, :]
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw), gb


# -- max pooling -------------------------------------------------------------

def maxpool_forward_nhwc(x):
    """Disjoint 2x2 max pooling; argmax ties resolve to the first cell.

    Window cells are numbered 0..3 in row-major order.
    """
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"max pooling needs even spatial dims, got {h}x{w}")
    cells = (x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2])
    out = np.maximum(np.maximum(cells[0], cells[1]), np.maximum(cells[2], cells[3]))
    idx = np.full(out.shape, 3, dtype=np.uint8)
    for k in (2, 1, 0):
        idx[cells[k] == out] = k
    return out, (idx, x.shape)


def maxpool_backward_nhwc(grad_out, cache):
    idx, shape = cache
    g = np.zeros(shape, dtype=grad_out.dtype)
    zero = grad_out.dtype.type(0)
    for k, (r, c) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        g[:, r::2, c::2] = np.where(idx == k, grad_out, zero)
    return g


# -- dropout -----------------------------------------------------------------

def dropout_forward(x, rate, train, rng=None):
    """Inverted dropout. Infer mode is the identity and draws nothing."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


# -- dense and activations -----------------------------------------------------

def dense_forward_batch(x, weights, bias):
    if x.shape[-1] != weights.shape[1]:
        raise ConfigError(
            f"dense layer expects {weights.shape[1]} inputs, got {x.shape[-1]}"
        )
    return x @ weights.T + bias


def dense_backward_batch(grad_out, x, weights):
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def activate(z, activation):
    """Apply ``activation``; ReLU works in place on ``z``."""
    if activation == "relu":
        return np.maximum(z, 0, out=z)
    if activation == "sigmoid":
        return expit(z)
    return z


def activation_backward(grad_out, a, activation):
    """Gradient through an activation given its output ``a``."""
    if activation == "relu":
        return np.where(a > 0, grad_out, grad_out.dtype.type(0))
    if activation == "sigmoid":
        return grad_out * a * (1 - a)
    return grad_out


# -- loss --------------------------------------------------------------------

def bce_loss(prediction, label):
    """Binary cross-entropy with the prediction clamped to [eps, 1 - eps].

    Works element-wise on arrays and returns the per-element loss.
    """
    p = np.clip(prediction, BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(label, dtype=p.dtype if hasattr(p, "dtype") else float)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def bce_grad(prediction, label):
    """Derivative of :func:`bce_loss` with respect to the prediction."""
    p = np.clip(prediction, BCE_EPS, 1 - BCE_EPS)
    return (p - label) / (p * (1 - p))


# -- single-sample (C, H, W) entry points ------------------------------------

def conv2d_forward(input, weights, bias, pad_before=None, pad_after=None):
    """Cross-correlate a ``(C, H, W)`` input with ``(F, C, kh, kw)`` filters.

    Padding defaults to the asymmetric "same" rule, so the output is
    ``(F, H, W)``. ``pad_before``/``pad_after`` override it per spatial dim.
    """
    x = np.asarray(input)
    if x.ndim != 3:
        raise ConfigError(f"expected (C, H, W) input, got shape {x.shape}")
    _, _, kh, kw = weights.shape
    if pad_before is None:
        pad_h, pad_w = same_padding(kh), same_padding(kw)
    else:
        pad_h = (pad_before[0], pad_after[0])
        pad_w = (pad_before[1], pad_after[1])
        if sum(pad_h) != kh - 1 or sum(pad_w) != kw - 1:
            raise ConfigError("padding must preserve spatial size at stride 1")
    out, _ = conv_forward_nhwc(
        x.transpose(1, 2, 0)[None], np.asarray(weights), np.asarray(bias), pad_h, pad_w
    )
    return out[0].transpose(2, 0, 1)


def maxpool_forward(input):
    """2x2 / stride 2 max pooling of a ``(C, H, W)`` array."""
    x = np.asarray(input)
    out, (idx, _) = maxpool_forward_nhwc(np.ascontiguousarray(x.transpose(1, 2, 0))[None])
    return out[0].transpose(2, 0, 1), idx[0].transpose(2, 0, 1)


def dense_forward(input, weights, bias, activation=None):
    x = np.asarray(input).reshape(-1)
    return activate(dense_forward_batch(x[None], weights, bias)[0].copy(), activation)
