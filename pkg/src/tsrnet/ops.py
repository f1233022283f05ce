"""Differentiable primitives: conv2d, relu, residual add, pixel shuffle, MSE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autograd import Tensor, make_output


class ShapeError(ValueError):
    pass


@dataclass
class Conv2dParams:
    weight: Tensor  # [C_out, C_in, k, k]
    bias: Optional[Tensor]  # [C_out]
    padding: int = 1

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]


# -- raw numpy kernels, shared with the cosine-similarity layer -----------------

def pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


BAND_PIXELS = 8192  # padded pixels per row band; keeps each tap's operands cache-sized


def _correlate_band(xpad: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # each tap reads the flattened padded rows at a fixed offset, so no slice is copied;
    # the k-1 wrap-around columns per row are computed and then dropped
    n, c, hp, wp = xpad.shape
    k = taps.shape[0]
    h, wd = hp - k + 1, wp - k + 1
    xf = xpad.reshape(n, c, hp * wp)
    span = (h - 1) * wp + wd
    out = np.zeros((n, taps.shape[2], h * wp), dtype=xpad.dtype)
    for kh in range(k):
        for kw in range(k):
            off = kh * wp + kw
            out[:, :, :span] += np.matmul(taps[kh, kw], xf[:, :, off:off + span])
    return out.reshape(n, -1, h, wp)[:, :, :, :wd]


def correlate(xpad: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 valid cross-correlation of a padded batch with ``w``.

    Accumulates one matmul per kernel tap in fixed (kh, kw) order, over bands
    of output rows.
    """
    n, c, hp, wp = xpad.shape
    o, _, k, _ = w.shape
    h, wd = hp - k + 1, wp - k + 1
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    xpad = np.ascontiguousarray(xpad)
    band = max(1, BAND_PIXELS // wp)
    if band >= h:
        return np.ascontiguousarray(_correlate_band(xpad, taps))
    out = np.empty((n, o, h, wd), dtype=xpad.dtype)
    for r in range(0, h, band):
        r1 = min(h, r + band)
        out[:, :, r:r1] = _correlate_band(xpad[:, :, r:r1 + k - 1], taps)
    return out


def correlate_grad_input(g: np.ndarray, w: np.ndarray, pad: int, in_hw: tuple) -> np.ndarray:
    n, o, h, wd = g.shape
    _, c, kh_, kw_ = w.shape
    hp, wp = in_hw[0] + 2 * pad, in_hw[1] + 2 * pad
    taps_t = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    dxpad = np.zeros((n, c, hp, wp), dtype=g.dtype)
    gf = g.reshape(n, o, h * wd)
    for kh in range(kh_):
        for kw in range(kw_):
            contrib = np.matmul(taps_t[kh, kw], gf).reshape(n, c, h, wd)
            dxpad[:, :, kh:kh + h, kw:kw + wd] += contrib
    return dxpad[:, :, pad:pad + in_hw[0], pad:pad + in_hw[1]]


def correlate_grad_weight(g: np.ndarray, xpad: np.ndarray, kshape: tuple) -> np.ndarray:
    n, o, h, wd = g.shape
    c = xpad.shape[1]
    kh_, kw_ = kshape
    gm = g.transpose(1, 0, 2, 3).reshape(o, n * h * wd)
    dw = np.empty((o, c, kh_, kw_), dtype=g.dtype)
    for kh in range(kh_):
        for kw in range(kw_):
            xs = xpad[:, :, kh:kh + h, kw:kw + wd].transpose(1, 0, 2, 3).reshape(c, n * h * wd)
            dw[:, :, kh, kw] = gm @ np.ascontiguousarray(xs.T)
    return dw


# -- differentiable ops ------------------------------------------------------

def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    w = p.weight
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    if x.dtype != w.dtype:
        raise TypeError(f"conv2d dtype mismatch: {x.dtype} vs {w.dtype}")
    pad = p.padding
    xpad = pad_hw(x.data, pad)
    out = correlate(xpad, w.data)
    if p.bias is not None:
        out += p.bias.data.reshape(1, -1, 1, 1)
    in_hw = x.shape[2:]

    def backward_fn(g):
        gx = correlate_grad_input(g, w.data, pad, in_hw) if x.requires_grad else None
        gw = correlate_grad_weight(g, xpad, w.shape[2:]) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if p.bias is not None and p.bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, w) if p.bias is None else (x, w, p.bias)
    return make_output("conv2d", out, inputs, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward_fn(g):
        return (g * mask,)

    return make_output("relu", out, (x,), backward_fn)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual_add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward_fn(g):
        return g, g

    return make_output("residual_add", out, (a, b), backward_fn)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange [N, C*r*r, H, W] into [N, C, H*r, W*r]."""
    n, cr2, h, w = x.shape
    if cr2 % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {cr2} not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def backward_fn(g):
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, cr2, h, w),)

    return make_output("pixel_shuffle", out, (x,), backward_fn)


def pixel_unshuffle_array(y: np.ndarray, r: int) -> np.ndarray:
    """Inverse permutation of :func:`pixel_shuffle` on raw arrays."""
    n, c, hr, wr = y.shape
    h, w = hr // r, wr // r
    return y.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Half mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.array([0.5 * np.sum(diff * diff) / n], dtype=pred.dtype)

    def backward_fn(g):
        gp = diff * (g[0] / n)
        return gp, -gp

    return make_output("mse_loss", out, (pred, target), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    out = np.array([np.sum(x.data)], dtype=x.dtype)
    shape = x.shape

    def backward_fn(g):
        return (np.full(shape, g[0], dtype=x.dtype),)

    return make_output("sum", out, (x,), backward_fn)
