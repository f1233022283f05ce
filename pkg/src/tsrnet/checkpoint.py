"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TSRN" | u32 version | u32 len, meta JSON
    u32 count, parameter records
    u32 count, optimizer buffer records
    u32 len, RNG state JSON

A record is ``u32 name_len, name utf-8, u8 dtype (0=f32, 1=f64), u32 ndim,
u32 dims..., raw little-endian data``.  Arrays round-trip bit-exactly.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adan import AdamState, AdanState
from .autograd import Tensor
from .model import TsrNetConfig, TsrNetParams

MAGIC = b"TSRN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: TsrNetConfig
    params: TsrNetParams
    epoch: int = 0
    optimizer: str = "adan"
    opt_state: Optional[object] = None
    rng_state: Optional[dict] = None
    train_config: dict = field(default_factory=dict)
    version: int = VERSION


def _write_u32(fh, v: int) -> None:
    fh.write(struct.pack("<I", v))


def _read_u32(fh) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack("<I", raw)[0]


def _write_blob(fh, data: bytes) -> None:
    _write_u32(fh, len(data))
    fh.write(data)


def _read_blob(fh) -> bytes:
    n = _read_u32(fh)
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise CheckpointError(f"cannot store dtype {arr.dtype} for {name}")
    _write_blob(fh, name.encode("utf-8"))
    fh.write(struct.pack("<B", _CODES[arr.dtype]))
    _write_u32(fh, arr.ndim)
    for d in arr.shape:
        _write_u32(fh, d)
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())


def _read_record(fh) -> tuple[str, np.ndarray]:
    name = _read_blob(fh).decode("utf-8")
    code = struct.unpack("<B", fh.read(1))[0]
    if code not in _DTYPES:
        raise CheckpointError(f"unknown dtype code {code} for {name}")
    ndim = _read_u32(fh)
    shape = tuple(_read_u32(fh) for _ in range(ndim))
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    raw = fh.read(nbytes)
    if len(raw) != nbytes:
        raise CheckpointError(f"truncated data for {name}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return name, arr


def _opt_records(state) -> list[tuple[str, np.ndarray]]:
    if state is None:
        return []
    out = []
    for buf_name, buf in state.buffers().items():
        for pname, arr in buf.items():
            out.append((f"{buf_name}/{pname}", arr))
    return out


def to_bytes(ck: Checkpoint) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    _write_u32(fh, VERSION)
    meta = {
        "model": ck.model_config.to_dict(),
        "epoch": ck.epoch,
        "optimizer": ck.optimizer,
        "opt_step": getattr(ck.opt_state, "step", 0),
        "train": ck.train_config,
    }
    _write_blob(fh, json.dumps(meta, sort_keys=True).encode("utf-8"))
    _write_u32(fh, len(ck.params))
    for name, t in ck.params.items():
        _write_record(fh, name, t.data)
    recs = _opt_records(ck.opt_state)
    _write_u32(fh, len(recs))
    for name, arr in recs:
        _write_record(fh, name, arr)
    _write_blob(fh, json.dumps(ck.rng_state).encode("utf-8"))
    return fh.getvalue()


def save_checkpoint(path, ck: Checkpoint) -> None:
    """Write atomically so an aborted run never leaves a half-written file."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(ck))
    os.replace(tmp, path)


def from_bytes(data: bytes) -> Checkpoint:
    fh = io.BytesIO(data)
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a TSRN checkpoint (bad magic)")
    version = _read_u32(fh)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(_read_blob(fh).decode("utf-8"))
    params = TsrNetParams()
    for _ in range(_read_u32(fh)):
        name, arr = _read_record(fh)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    buffers: dict[str, dict] = {}
    for _ in range(_read_u32(fh)):
        name, arr = _read_record(fh)
        buf_name, _, pname = name.partition("/")
        buffers.setdefault(buf_name, {})[pname] = arr
    rng_state = json.loads(_read_blob(fh).decode("utf-8"))

    kind = meta["optimizer"]
    step = meta.get("opt_step", 0)
    if kind == "adan":
        opt_state = AdanState(step, buffers.get("p", {}), buffers.get("q", {}), buffers.get("s", {}),
                              buffers.get("prev", {}))
    elif kind == "adam":
        opt_state = AdamState(step, buffers.get("m", {}), buffers.get("v", {}))
    else:
        raise CheckpointError(f"unknown optimizer {kind!r}")
    if not buffers:
        opt_state = None
    return Checkpoint(TsrNetConfig(**meta["model"]), params, meta["epoch"], kind, opt_state, rng_state,
                      meta.get("train", {}), version)


def load_checkpoint(path) -> Checkpoint:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
