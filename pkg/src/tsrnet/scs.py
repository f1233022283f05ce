"""Sharpened cosine similarity convolution and the cosine transform block.

For every output location the flattened zero-padded 3x3xC_in patch ``f`` is
compared with each flattened filter ``k``::

    out = sign(<f, k>) * (|<f, k>| / ((|f| + eps) * (|k| + eps))) ** p

``p`` is learned per filter, ``eps`` is a single learned scalar.  There is no
bias.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, make_output
from .ops import (Conv2dParams, ShapeError, conv2d, correlate, correlate_grad_input,
                  correlate_grad_weight, pad_hw, relu)

P_RANGE = (0.1, 10.0)
EPS_RANGE = (1e-6, 1.0)
P_INIT = 1.0
EPS_INIT = 1e-3


@dataclass
class ScsParams:
    weight: Tensor  # [C_out, C_in, 3, 3]
    p: Tensor  # [C_out]
    eps: Tensor  # [1]

    def project(self) -> None:
        """Clamp the exponent and stabiliser into their admissible ranges, in place."""
        np.clip(self.p.data, *P_RANGE, out=self.p.data)
        np.clip(self.eps.data, *EPS_RANGE, out=self.eps.data)


def _box_ones(dtype) -> np.ndarray:
    return np.ones((1, 1, 3, 3), dtype=dtype)


def scs_conv2d(x: Tensor, s: ScsParams, allow_zero_eps: bool = False) -> Tensor:
    w = s.weight
    if x.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"scs_conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    if w.shape[2:] != (3, 3):
        raise ShapeError("scs_conv2d supports 3x3 filters only")
    e = s.eps.data.reshape(-1)[0]
    if e < 0 or (e == 0 and not allow_zero_eps):
        raise ValueError(f"scs_conv2d requires eps > 0, got {e}")

    xd, wd = x.data, w.data
    dtype = xd.dtype
    hw = xd.shape[2:]
    xpad = pad_hw(xd, 1)
    dot = correlate(xpad, wd)

    energy = pad_hw(np.sum(xd * xd, axis=1, keepdims=True), 1)
    fn = np.sqrt(correlate(energy, _box_ones(dtype)))  # [N, 1, H, W]
    kn = np.sqrt(np.sum(wd * wd, axis=(1, 2, 3)))  # [C_out]
    fe = fn + e
    ke = (kn + e).reshape(1, -1, 1, 1)
    denom = fe * ke
    inv_denom = np.zeros_like(denom)
    np.divide(1.0, denom, out=inv_denom, where=denom > 0)

    nz = dot != 0
    base = np.zeros_like(dot)
    np.divide(np.abs(dot), denom, out=base, where=nz)
    pp = s.p.data.reshape(1, -1, 1, 1)
    powered = base ** pp
    out = np.sign(dot) * powered

    def backward_fn(g):
        # d out / d dot; the sign factor is piecewise constant
        ratio_pm1 = np.zeros_like(base)
        np.divide(powered, base, out=ratio_pm1, where=nz)
        g_dot = g * pp * ratio_pm1 * inv_denom
        g_denom = -g * pp * out * inv_denom

        gx = gw = gp = ge = None
        if x.requires_grad:
            g_fn = np.sum(g_denom * ke, axis=1, keepdims=True)
            q = np.zeros_like(fn)
            np.divide(g_fn, fn, out=q, where=fn > 0)
            spread = correlate_grad_input(q, _box_ones(dtype), 1, hw)
            gx = correlate_grad_input(g_dot, wd, 1, hw) + spread * xd
        if w.requires_grad:
            g_kn = np.sum(g_denom * fe, axis=(0, 2, 3))
            scale = np.zeros_like(kn)
            np.divide(g_kn, kn, out=scale, where=kn > 0)
            gw = correlate_grad_weight(g_dot, xpad, (3, 3)) + scale.reshape(-1, 1, 1, 1) * wd
        if s.p.requires_grad:
            log_base = np.zeros_like(base)
            np.log(base, out=log_base, where=nz)
            gp = np.sum(g * out * log_base, axis=(0, 2, 3))
        if s.eps.requires_grad:
            ge = np.array([np.sum(g_denom * (fe + ke))], dtype=dtype)
        return gx, gw, gp, ge

    return make_output("scs_conv2d", out, (x, w, s.p, s.eps), backward_fn)


def ctmb(x: Tensor, conv: Conv2dParams, s: ScsParams) -> Tensor:
    """Conv, then cosine convolution, then ReLU."""
    if conv.out_channels != s.weight.shape[1]:
        raise ShapeError("ctmb: conv output channels must equal cosine-conv input channels")
    return relu(scs_conv2d(conv2d(x, conv), s))
