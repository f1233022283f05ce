import numpy as np
import pytest

from tsrnet import adan
from tsrnet.checkpoint import (MAGIC, Checkpoint, CheckpointError, from_bytes, load_checkpoint,
                               save_checkpoint, to_bytes)
from tsrnet.model import TsrNetConfig, build


def make_ck(dtype=np.float32, optimizer="adan"):
    cfg = TsrNetConfig(channels=3, tree_depth=1, fusion_depth=1)
    params = build(cfg, seed=1, dtype=dtype)
    rng = np.random.default_rng(9)
    if optimizer == "adan":
        state = adan.init_state(params.tensors)
        grads = {k: rng.standard_normal(t.shape).astype(dtype) for k, t in params.items()}
        adan.step(state, adan.AdanConfig(), params.tensors, grads)
    else:
        state = adan.adam_init_state(params.tensors)
        grads = {k: rng.standard_normal(t.shape).astype(dtype) for k, t in params.items()}
        adan.adam_step(state, adan.AdamConfig(), params.tensors, grads)
    return Checkpoint(cfg, params, 3, optimizer, state, rng.bit_generator.state, {"train.seed": 0})


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("optimizer", ["adan", "adam"])
def test_round_trip_bit_exact(tmp_path, dtype, optimizer):
    ck = make_ck(dtype, optimizer)
    path = tmp_path / "a.tsrn"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.model_config == ck.model_config and back.epoch == 3 and back.optimizer == optimizer
    assert list(back.params) == list(ck.params)
    for k in ck.params:
        assert back.params[k].data.dtype == ck.params[k].data.dtype
        assert np.array_equal(back.params[k].data, ck.params[k].data)
    for buf, d in ck.opt_state.buffers().items():
        for k, arr in d.items():
            assert np.array_equal(back.opt_state.buffers()[buf][k], arr)
    assert back.opt_state.step == ck.opt_state.step
    r1, r2 = np.random.default_rng(), np.random.default_rng()
    r1.bit_generator.state = ck.rng_state
    r2.bit_generator.state = back.rng_state
    assert r1.integers(0, 2 ** 62) == r2.integers(0, 2 ** 62)
    assert to_bytes(back) == to_bytes(ck)
    assert not (tmp_path / "a.tsrn.tmp").exists()


def test_header_layout():
    data = to_bytes(make_ck())
    assert data[:4] == MAGIC
    assert int.from_bytes(data[4:8], "little") == 1


def test_corrupt_inputs(tmp_path):
    data = to_bytes(make_ck())
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(CheckpointError):
        from_bytes(data[: len(data) // 2])
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.tsrn")
