"""Differentiable primitives on (N, C, H, W) tensors, each with an analytic backward rule."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _same_shape(op: str, *ts: Tensor):
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ValueError(f"{op}: shape mismatch {shape} vs {t.shape}")


# -- convolution -------------------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """'Same'-padded square convolution; weights (O, C, k, k) with odd k."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects (N,C,H,W) input and (O,C,k,k) weights")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: weight {w.shape} incompatible with input {x.shape}")
    if b is not None and b.shape != (o,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({o},)")
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wm = w.data.reshape(o, -1)
    out = np.matmul(wm, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def backward(g):
        g = g.reshape(n, o, ho * wo)
        gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gb = g.sum(axis=(0, 2)) if b is not None else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wm.T, g).reshape(n, c, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make(out, parents, backward, f"conv{k}x{k}_s{stride}")


# -- pointwise ---------------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return make(np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return make(a.data + np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,), "add_const")
    _same_shape("add", a, b)
    return make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return make(a.data - np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,), "sub_const")
    _same_shape("sub", a, b)
    return make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = np.asarray(b, dtype=a.dtype)
        return make(a.data * s, (a,), lambda g: (g * s,), "mul_const")
    _same_shape("mul", a, b)
    return make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    s = x.dtype.type(scale)
    return make(x.data * s + x.dtype.type(shift), (x,), lambda g: (g * s,), "affine")


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(out, tuple(tensors), backward, "concat")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = np.matmul(a.data, b.data)

    def backward(g):
        return np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g)

    return make(out, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make(y, (x,), backward, "softmax")


def total(x: Tensor) -> Tensor:
    return make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def project(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) for a constant array; turns any tensor into a scalar test objective."""
    w = np.asarray(weights, dtype=x.dtype)
    return make(np.asarray((x.data * w).sum()), (x,), lambda g: (g * w,), "project")


# -- resampling --------------------------------------------------------------------------------


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights (n_out, n_in) with half-pixel centres and edge clamping."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - f)
    np.add.at(m, (rows, i1), f)
    m.setflags(write=False)
    return m


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize of the last two axes to ``size`` = (H_out, W_out)."""
    h, w = x.shape[-2:]
    ho, wo = size
    if (ho, wo) == (h, w):
        return x
    ry = interp_matrix(h, ho).astype(x.dtype)
    rx = interp_matrix(w, wo).astype(x.dtype)
    out = np.matmul(np.matmul(ry, x.data), rx.T)
    return make(out, (x,), lambda g: (np.matmul(np.matmul(ry.T, g), rx),), "bilinear_resize")


def sample_with_matrix(x: Tensor, m: np.ndarray, size: tuple[int, int]) -> Tensor:
    """Per-sample fixed linear resampling: out[n, :, p] = sum_q m[n, p, q] * x[n, :, q].

    ``m`` has shape (N, H_out*W_out, H*W) and is treated as a constant (no gradient).
    """
    n, c, h, w = x.shape
    m = np.asarray(m, dtype=x.dtype)
    mt = np.swapaxes(m, 1, 2)
    out = np.matmul(x.data.reshape(n, c, h * w), mt).reshape(n, c, *size)

    def backward(g):
        return (np.matmul(g.reshape(n, c, -1), m).reshape(n, c, h, w),)

    return make(out, (x,), backward, "warp_sample")


# -- losses ------------------------------------------------------------------------------------


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean |pred - target| over the pixels where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_l1: no valid ground-truth pixel")
    if mask.shape != pred.shape:
        raise ValueError(f"masked_l1: mask {mask.shape} vs prediction {pred.shape}")
    t = np.where(mask, np.asarray(target, dtype=pred.dtype), 0)
    diff = np.where(mask, pred.data - t, 0)
    value = np.abs(diff).sum(dtype=np.float64) / count
    sign = np.sign(diff).astype(pred.dtype) / pred.dtype.type(count)
    return make(np.asarray(value, dtype=pred.dtype), (pred,), lambda g: (g * sign,), "masked_l1")


def edge_aware_smoothness(depth: Tensor, intensity: np.ndarray) -> Tensor:
    """mean |dx d| exp(-|dx I|) + mean |dy d| exp(-|dy I|) with forward differences."""
    i = np.asarray(intensity, dtype=depth.dtype)
    d = depth.data
    if i.shape != d.shape:
        raise ValueError(f"smoothness: intensity {i.shape} vs depth {d.shape}")
    dx = d[..., :, 1:] - d[..., :, :-1]
    dy = d[..., 1:, :] - d[..., :-1, :]
    wx = np.exp(-np.abs(i[..., :, 1:] - i[..., :, :-1]))
    wy = np.exp(-np.abs(i[..., 1:, :] - i[..., :-1, :]))
    value = (np.abs(dx) * wx).mean(dtype=np.float64) + (np.abs(dy) * wy).mean(dtype=np.float64)

    def backward(g):
        sx = np.sign(dx) * wx / dx.size
        sy = np.sign(dy) * wy / dy.size
        gd = np.zeros_like(d)
        gd[..., :, 1:] += sx
        gd[..., :, :-1] -= sx
        gd[..., 1:, :] += sy
        gd[..., :-1, :] -= sy
        return (g * gd,)

    return make(np.asarray(value, dtype=depth.dtype), (depth,), backward, "smoothness")
