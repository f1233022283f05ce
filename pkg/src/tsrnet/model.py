"""Tree-guided super-resolution network.

Four parallel tree branches process the LR image; three fusion blocks merge
them pairwise in sequence; a conv + pixel shuffle reconstructs the SR image::

    T1, T2 = CTMB(9 x [conv+relu](relu(conv(x))))
    T3, T4 = 9 x [conv+relu](relu(conv(x)))
    f1 = CTMB(5 x [conv+relu](T1 + T2))
    f2 = 5 x [conv+relu](f1 + T3)
    f3 = 5 x [conv+relu](f2 + T4)
    out = pixel_shuffle(conv(f3), scale)

``num_trees < 4`` keeps the first ``num_trees`` branches and the fusion
blocks that join them.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .autograd import Tensor
from .ops import Conv2dParams, ShapeError, conv2d, pixel_shuffle, relu, residual_add
from .scs import EPS_INIT, P_INIT, ScsParams, ctmb

MAX_TREES = 4
CTMB_TREES = (1, 2)


@dataclass
class TsrNetConfig:
    scale: int = 2
    channels: int = 64
    tree_depth: int = 9
    fusion_depth: int = 5
    in_channels: int = 3
    enable_ctmb: bool = True
    num_trees: int = 4

    def validate(self) -> "TsrNetConfig":
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if not 1 <= self.num_trees <= MAX_TREES:
            raise ValueError(f"num_trees must be in 1..{MAX_TREES}, got {self.num_trees}")
        for name in ("channels", "in_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("tree_depth", "fusion_depth"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class TsrNetParams:
    """Ordered, uniquely named collection of learnable tensors."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def conv(self, path: str) -> Conv2dParams:
        return Conv2dParams(self.tensors[f"{path}.weight"], self.tensors[f"{path}.bias"], padding=1)

    def scs(self, path: str) -> ScsParams:
        return ScsParams(self.tensors[f"{path}.weight"], self.tensors[f"{path}.p"], self.tensors[f"{path}.eps"])

    def scs_layers(self) -> list[ScsParams]:
        return [self.scs(n[: -len(".p")]) for n in self.tensors if n.endswith("/scs.p")]

    def astype(self, dtype) -> "TsrNetParams":
        return TsrNetParams({k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k)
                             for k, v in self.tensors.items()})

    def requires_grad_(self, flag: bool = True) -> "TsrNetParams":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self


def _conv_entry(params, rng, path, c_in, c_out, dtype):
    std = np.sqrt(2.0 / (c_in * 9))
    w = rng.standard_normal((c_out, c_in, 3, 3)) * std
    params[f"{path}.weight"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{path}.weight")
    params[f"{path}.bias"] = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True, name=f"{path}.bias")


def _scs_entry(params, rng, path, c_in, c_out, dtype):
    std = np.sqrt(2.0 / (c_in * 9))
    w = rng.standard_normal((c_out, c_in, 3, 3)) * std
    params[f"{path}.weight"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{path}.weight")
    params[f"{path}.p"] = Tensor(np.full(c_out, P_INIT, dtype=dtype), requires_grad=True, name=f"{path}.p")
    params[f"{path}.eps"] = Tensor(np.full(1, EPS_INIT, dtype=dtype), requires_grad=True, name=f"{path}.eps")


def _ctmb_entry(params, rng, path, c, dtype):
    _conv_entry(params, rng, f"{path}/conv", c, c, dtype)
    _scs_entry(params, rng, f"{path}/scs", c, c, dtype)


def build(config: TsrNetConfig, seed: int = 0, dtype=np.float32) -> TsrNetParams:
    config.validate()
    rng = np.random.default_rng(seed)
    c = config.channels
    params = TsrNetParams()
    for t in range(1, config.num_trees + 1):
        _conv_entry(params, rng, f"t{t}/head/conv", config.in_channels, c, dtype)
        for d in range(config.tree_depth):
            _conv_entry(params, rng, f"t{t}/btbb{d}/conv", c, c, dtype)
        if config.enable_ctmb and t in CTMB_TREES:
            _ctmb_entry(params, rng, f"t{t}/ctmb", c, dtype)
    for f in range(1, config.num_trees):
        for d in range(config.fusion_depth):
            _conv_entry(params, rng, f"fusion{f}/btbb{d}/conv", c, c, dtype)
        if config.enable_ctmb and f == 1:
            _ctmb_entry(params, rng, f"fusion{f}/ctmb", c, dtype)
    _conv_entry(params, rng, "recon/conv", c, config.in_channels * config.scale ** 2, dtype)
    return params


def _btbb_stack(params: TsrNetParams, prefix: str, depth: int, h: Tensor) -> Tensor:
    for d in range(depth):
        h = relu(conv2d(h, params.conv(f"{prefix}/btbb{d}/conv")))
    return h


def tree_branch(params: TsrNetParams, config: TsrNetConfig, x: Tensor, t: int) -> Tensor:
    h = relu(conv2d(x, params.conv(f"t{t}/head/conv")))
    h = _btbb_stack(params, f"t{t}", config.tree_depth, h)
    if config.enable_ctmb and t in CTMB_TREES:
        h = ctmb(h, params.conv(f"t{t}/ctmb/conv"), params.scs(f"t{t}/ctmb/scs"))
    return h


def fusion_block(params: TsrNetParams, config: TsrNetConfig, f: int, h: Tensor) -> Tensor:
    h = _btbb_stack(params, f"fusion{f}", config.fusion_depth, h)
    if config.enable_ctmb and f == 1:
        h = ctmb(h, params.conv(f"fusion{f}/ctmb/conv"), params.scs(f"fusion{f}/ctmb/scs"))
    return h


def reconstruct(params: TsrNetParams, config: TsrNetConfig, h: Tensor) -> Tensor:
    return pixel_shuffle(conv2d(h, params.conv("recon/conv")), config.scale)


def forward(params: TsrNetParams, config: TsrNetConfig, x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != config.in_channels:
        raise ShapeError(f"expected input [N, {config.in_channels}, h, w], got {x.shape}")
    if min(x.shape[2:]) < 3:
        raise ShapeError(f"input spatial size must be at least 3x3, got {x.shape[2:]}")
    stream = tree_branch(params, config, x, 1)
    for t in range(2, config.num_trees + 1):
        stream = fusion_block(params, config, t - 1, residual_add(stream, tree_branch(params, config, x, t)))
    return reconstruct(params, config, stream)


def count_params(params: TsrNetParams) -> int:
    return int(sum(t.data.size for t in params.tensors.values()))


def closed_form_param_count(config: TsrNetConfig) -> int:
    """Parameter count from the configuration alone (no tensors built)."""
    c, cin = config.channels, config.in_channels
    conv_cc = c * c * 9 + c
    ctmb_block = conv_cc + (c * c * 9 + c + 1)
    total = config.num_trees * ((cin * c * 9 + c) + config.tree_depth * conv_cc)
    total += (config.num_trees - 1) * config.fusion_depth * conv_cc
    if config.enable_ctmb:
        total += ctmb_block * (min(config.num_trees, 2) + (1 if config.num_trees > 1 else 0))
    cout = cin * config.scale ** 2
    total += c * cout * 9 + cout
    return total


@dataclass(frozen=True)
class FlopCount:
    macs: int

    @property
    def flops(self) -> int:
        return 2 * self.macs


def count_flops(config: TsrNetConfig, h: int, w: int) -> FlopCount:
    """Analytic multiply-accumulate count of one forward pass on an h x w LR image.

    A 3x3 conv costs C_out*C_in*9 MACs per pixel.  A cosine convolution costs
    the same plus a patch-norm pass (C_in*9 per pixel) and a kernel-norm pass
    (C_out*C_in*9, once).
    """
    config.validate()
    c, cin, px = config.channels, config.in_channels, h * w

    def conv(ci, co):
        return co * ci * 9 * px

    def scs(ci, co):
        return conv(ci, co) + ci * 9 * px + co * ci * 9

    macs = 0
    for t in range(1, config.num_trees + 1):
        macs += conv(cin, c) + config.tree_depth * conv(c, c)
        if config.enable_ctmb and t in CTMB_TREES:
            macs += conv(c, c) + scs(c, c)
    for f in range(1, config.num_trees):
        macs += config.fusion_depth * conv(c, c)
        if config.enable_ctmb and f == 1:
            macs += conv(c, c) + scs(c, c)
    macs += conv(c, cin * config.scale ** 2)
    return FlopCount(int(macs))
