"""Adan optimizer (adaptive Nesterov momentum), plus a plain Adam baseline.

Update for parameter ``w`` with gradient ``g_j`` at step ``j``::

    p_j = (1 - a1) p_{j-1} + a1 g_j
    q_j = (1 - a2) q_{j-1} + a2 (g_j - g_{j-1})
    s_j = (1 - a3) s_{j-1} + a3 (g_j + (1 - a2)(g_j - g_{j-1}))^2
    r_j = r / (sqrt(s_j) + eps)
    w  <- (w - r_j * (p_j + (1 - a2) q_j)) / (1 + lambda r)

No bias correction is applied; ``g_0`` is taken equal to ``g_1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .autograd import NonFiniteError, Tensor


@dataclass
class AdanConfig:
    alpha1: float = 0.02
    alpha2: float = 0.08
    alpha3: float = 0.01
    lr: float = 4e-4
    eps: float = 1e-8
    weight_decay: float = 0.0

    def validate(self) -> "AdanConfig":
        for name in ("alpha1", "alpha2", "alpha3"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        return self

    @classmethod
    def from_betas(cls, beta1=0.98, beta2=0.92, beta3=0.99, **kw) -> "AdanConfig":
        """Momentum coefficients quoted as decay rates map to ``alpha = 1 - beta``."""
        return cls(alpha1=1 - beta1, alpha2=1 - beta2, alpha3=1 - beta3, **kw)


@dataclass
class AdanState:
    step: int = 0
    p: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    s: dict = field(default_factory=dict)
    prev_grad: dict = field(default_factory=dict)

    def buffers(self) -> dict[str, dict]:
        return {"p": self.p, "q": self.q, "s": self.s, "prev": self.prev_grad}


def init_state(params: Mapping[str, Tensor]) -> AdanState:
    state = AdanState()
    for name, t in params.items():
        state.p[name] = np.zeros_like(t.data)
        state.q[name] = np.zeros_like(t.data)
        state.s[name] = np.zeros_like(t.data)
    return state


def _gather_grads(params, grads):
    if grads is not None:
        return grads
    out = {}
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        out[name] = t.grad
    return out


def step(state: AdanState, config: AdanConfig, params: Mapping[str, Tensor],
         grads: Optional[Mapping[str, np.ndarray]] = None, lr: Optional[float] = None) -> AdanState:
    """Apply one Adan update to ``params`` in place and advance ``state``."""
    grads = _gather_grads(params, grads)
    r = config.lr if lr is None else lr
    a1, a2, a3 = config.alpha1, config.alpha2, config.alpha3
    decay = 1.0 / (1.0 + config.weight_decay * r)
    for name, t in params.items():
        g = np.asarray(grads[name])
        if g.shape != t.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {t.data.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        g = g.astype(t.data.dtype, copy=False)
        prev = state.prev_grad.get(name, g)
        diff = g - prev
        p = state.p[name] = (1 - a1) * state.p[name] + a1 * g
        q = state.q[name] = (1 - a2) * state.q[name] + a2 * diff
        u = g + (1 - a2) * diff
        s = state.s[name] = (1 - a3) * state.s[name] + a3 * (u * u)
        rate = r / (np.sqrt(s) + config.eps)
        t.data[...] = decay * (t.data - rate * (p + (1 - a2) * q))
        state.prev_grad[name] = g.copy()
    state.step += 1
    return state


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.99
    lr: float = 4e-4
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def buffers(self) -> dict[str, dict]:
        return {"m": self.m, "v": self.v}


def adam_init_state(params: Mapping[str, Tensor]) -> AdamState:
    state = AdamState()
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(state: AdamState, config: AdamConfig, params: Mapping[str, Tensor],
              grads: Optional[Mapping[str, np.ndarray]] = None, lr: Optional[float] = None) -> AdamState:
    grads = _gather_grads(params, grads)
    r = config.lr if lr is None else lr
    state.step += 1
    bc1 = 1 - config.beta1 ** state.step
    bc2 = 1 - config.beta2 ** state.step
    for name, t in params.items():
        g = np.asarray(grads[name]).astype(t.data.dtype, copy=False)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name] = config.beta1 * state.m[name] + (1 - config.beta1) * g
        v = state.v[name] = config.beta2 * state.v[name] + (1 - config.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        t.data[...] = (t.data - r * update) / (1 + config.weight_decay * r)
    return state
