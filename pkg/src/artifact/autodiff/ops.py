"""Differentiable operators used by the encoder, decoder, repair blocks and
discriminator.

Every op takes and returns :class:`~artifact.autodiff.tensor.Tensor` objects
and records its own backward closure. Arrays keep the dtype of their inputs so
the same code runs in float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, as_tensor, make_result

ACTIVATIONS = ("leaky_relu_0.1", "relu", "sigmoid", "linear")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(a, like: Tensor | None = None) -> Tensor:
    if isinstance(a, Tensor):
        return a
    dtype = like.dtype if like is not None else None
    return as_tensor(np.asarray(a, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot combine shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub: cannot combine shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: cannot combine shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc
    src = a.shape
    return make_result(out, (a,), lambda g: (g.reshape(src),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    src, dtype = a.shape, a.dtype
    return make_result(np.asarray(a.data.sum(), dtype=dtype), (a,), lambda g: (np.full(src, g, dtype=dtype),))


def mean(a: Tensor) -> Tensor:
    src, dtype, n = a.shape, a.dtype, a.size
    return make_result(
        np.asarray(a.data.mean(), dtype=dtype), (a,), lambda g: (np.full(src, g / n, dtype=dtype),)
    )


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_batch(a: Tensor, start: int, stop: int) -> Tensor:
    src = a.shape

    def bw(g):
        full = np.zeros(src, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return make_result(a.data[start:stop], (a,), bw)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------
def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    # max(x*slope, x); slope 1 at exactly 0
    pos = a.data >= 0
    out = np.where(pos, a.data, a.data * slope).astype(a.dtype, copy=False)
    return make_result(out, (a,), lambda g: (np.where(pos, g, g * slope).astype(g.dtype, copy=False),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return make_result(a.data * pos, (a,), lambda g: (g * pos,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) evaluated without overflow."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return make_result(out.astype(x.dtype, copy=False), (a,), lambda g: (g * s,))


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu_0.1":
        return leaky_relu(a, 0.1)
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "linear":
        return a
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------
def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        return (size - kernel) // stride + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def same_padding(size: int, kernel: int, stride: int) -> tuple:
    """(before, after) padding; odd totals put the extra pixel after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, weights: Tensor, bias: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2D cross-correlation. ``weights`` is ``(filters, in_channels, k, k)``."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be 4-D (N, C, H, W), got shape {x.shape}")
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise DimensionError(f"conv2d: weights must be (F, C, k, k), got shape {weights.shape}")
    n, c, h, w = x.shape
    f, wc, k, _ = weights.shape
    if wc != c:
        raise DimensionError(f"conv2d: input channels (axis 1 of input) = {c} but weights in-channels (axis 1) = {wc}")
    if bias is not None and bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match filters (axis 0 of weights) = {f}")
    if stride not in (1, 2, 4):
        raise ValueError(f"conv2d: unsupported stride {stride}")
    if padding == "same":
        ph, pw = same_padding(h, k, stride), same_padding(w, k, stride)
    elif padding == "valid":
        ph = pw = (0, 0)
        if h < k or w < k:
            raise DimensionError(f"conv2d: spatial dims {(h, w)} smaller than kernel {k} with valid padding")
    else:
        raise ValueError(f"unknown padding mode {padding!r}")

    xp = x.data
    if any(ph) or any(pw):
        xp = np.pad(xp, ((0, 0), (0, 0), ph, pw))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, Ho, Wo, C, k, k) -> rows of receptive-field patches
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = weights.data.reshape(f, c * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    parents = (x, weights) if bias is None else (x, weights, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gw = (g2.T @ cols).reshape(weights.shape) if weights.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph[0] : ph[0] + h, pw[0] : pw[0] + w]
            gx = np.ascontiguousarray(gx)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, bw)


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row i holds the corner-aligned interpolation weights for output i."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(src).astype(int)
    lo = np.minimum(lo, n_in - 2)
    frac = src - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with corner-aligned sampling (corners map to corners)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize_bilinear: target dims must be >= 1, got {(out_h, out_w)}")
    if x.ndim != 4:
        raise DimensionError(f"resize_bilinear: input must be 4-D, got shape {x.shape}")
    _, _, h, w = x.shape
    ah = _bilinear_matrix(h, out_h, x.dtype)
    aw = _bilinear_matrix(w, out_w, x.dtype)
    # out[n,c] = ah @ x[n,c] @ aw.T
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),))


def upsample_nearest(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Replicate every element into a (target_h/h) x (target_w/w) block."""
    n, c, h, w = x.shape
    if target_h % h or target_w % w:
        raise ValueError(f"upsample_nearest: target {(target_h, target_w)} is not an integer multiple of {(h, w)}")
    fh, fw = target_h // h, target_w // w
    if fh < 1 or fw < 1:
        raise ValueError(f"upsample_nearest: target {(target_h, target_w)} smaller than input {(h, w)}")
    out = x.data.repeat(fh, axis=2).repeat(fw, axis=3)
    return make_result(out, (x,), lambda g: (g.reshape(n, c, h, fh, w, fw).sum(axis=(3, 5)),))


def resize_nearest(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbour resize to arbitrary dims (source index floor(i*h/out_h))."""
    n, c, h, w = x.shape
    ri = (np.arange(out_h) * h) // out_h
    ci = (np.arange(out_w) * w) // out_w
    out = x.data[:, :, ri][:, :, :, ci]

    def bw(g):
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        tmp = np.zeros((n, c, h, out_w), dtype=g.dtype)
        np.add.at(tmp, (slice(None), slice(None), ri), g)
        np.add.at(gx, (slice(None), slice(None), slice(None), ci), tmp)
        return (gx,)

    return make_result(np.ascontiguousarray(out), (x,), bw)


def avg_pool3(x: Tensor) -> Tensor:
    """3x3 box average, stride 1, edge-replicate padding; shape preserving."""
    if x.ndim != 4:
        raise DimensionError(f"avg_pool3: input must be 4-D, got shape {x.shape}")
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    acc = np.zeros_like(x.data)
    for i in range(3):
        for j in range(3):
            acc += xp[:, :, i : i + h, j : j + w]
    out = acc / 9.0

    def bw(g):
        gp = np.zeros((n, c, h + 2, w + 2), dtype=g.dtype)
        g9 = g / 9.0
        for i in range(3):
            for j in range(3):
                gp[:, :, i : i + h, j : j + w] += g9
        # fold replicated border back onto the edge pixels
        gp[:, :, 1, :] += gp[:, :, 0, :]
        gp[:, :, h, :] += gp[:, :, h + 1, :]
        gp[:, :, :, 1] += gp[:, :, :, 0]
        gp[:, :, :, w] += gp[:, :, :, w + 1]
        return (np.ascontiguousarray(gp[:, :, 1 : h + 1, 1 : w + 1]),)

    return make_result(out.astype(x.dtype, copy=False), (x,), bw)


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average over (nearly) equal bins so the output grid is out_h x out_w."""
    n, c, h, w = x.shape
    rows = [(i * h // out_h, -(-(i + 1) * h // out_h)) for i in range(out_h)]
    cols = [(j * w // out_w, -(-(j + 1) * w // out_w)) for j in range(out_w)]
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def bw(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += g[:, :, i : i + 1, j : j + 1] / area
        return (gx,)

    return make_result(out, (x,), bw)


# ---------------------------------------------------------------------------
# normalization and dense layers
# ---------------------------------------------------------------------------
@dataclass
class BatchNormState:
    """Learnable affine parameters plus running statistics for one BN layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batch_norm(x: Tensor, state: BatchNormState, training: bool, update_stats: bool = True) -> Tensor:
    """Per-channel batch normalization over (N, H, W) for 4-D or N for 2-D input.

    In training mode the running statistics are updated in place (unless
    ``update_stats`` is false) with the unbiased batch variance.
    """
    gamma, beta = state.gamma, state.beta
    running_mean, running_var = state.running_mean, state.running_var
    momentum, eps = state.momentum, state.eps
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,):
        raise DimensionError(f"batch_norm: channel count {c} (axis 1) does not match state vectors {gamma.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    count = x.size // c
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            unbiased = var * count / max(count - 1, 1)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    gd = gamma.data

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd.reshape(bshape)
            if training:
                m1 = gxhat.mean(axis=axes, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
                gx = (gxhat - m1 - xhat * m2) * inv.reshape(bshape)
            else:
                gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weights + bias``; ``weights`` is ``(in, out)``."""
    xd = x.data.reshape(x.shape[0], -1)
    if xd.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"dense: flattened input length {xd.shape[1]} does not match weight rows (axis 0) = {weights.shape[0]}"
        )
    if bias is not None and bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias shape {bias.shape} does not match weight columns {weights.shape[1]}")
    out = xd @ weights.data
    if bias is not None:
        out = out + bias.data
    wd, src = weights.data, x.shape
    parents = (x, weights) if bias is None else (x, weights, bias)

    def bw(g):
        gx = (g @ wd.T).reshape(src) if x.requires_grad else None
        gw = xd.T @ g if weights.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if bias.requires_grad else None)

    return make_result(out, parents, bw)
