"""Training loop, evaluation loop, and learning-rate schedule."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import adan as adan_mod
from .autograd import NonFiniteError, Tape, Tensor, backward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import PatchDataset, bicubic_resize, list_pngs, load_png, make_pairs, check_scale
from .metrics import MetricReport, score_pair
from .model import TsrNetConfig, TsrNetParams, build, forward
from .ops import mse_loss

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "mean_loss", "lr", "wall_time_s", "steps")


class TrainingAborted(RuntimeError):
    pass


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Multi-step schedule: halve the base rate at every ``lr_halve_every`` boundary."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    t = config.train
    return t.base_lr * 0.5 ** (epoch // t.lr_halve_every)


class Optimizer:
    """Dispatches to Adan or the Adam baseline."""

    def __init__(self, config: TrainConfig, params: TsrNetParams, state=None):
        self.kind = config.train.optimizer
        decay = config.train.weight_decay
        if self.kind == "adan":
            self.hparams = dataclasses.replace(config.adan, lr=config.train.base_lr, weight_decay=decay)
            self.state = state or adan_mod.init_state(params.tensors)
        else:
            self.hparams = dataclasses.replace(config.adam, lr=config.train.base_lr, weight_decay=decay)
            self.state = state or adan_mod.adam_init_state(params.tensors)

    def step(self, params: TsrNetParams, lr: float) -> None:
        if self.kind == "adan":
            adan_mod.step(self.state, self.hparams, params.tensors, lr=lr)
        else:
            adan_mod.adam_step(self.state, self.hparams, params.tensors, lr=lr)
        for layer in params.scs_layers():
            layer.project()


def train_step(params: TsrNetParams, model_cfg: TsrNetConfig, opt: Optimizer,
               lr_batch: np.ndarray, hr_batch: np.ndarray, lr: float) -> float:
    x = Tensor._wrap(lr_batch.astype(np.float32, copy=False), False)
    y = Tensor._wrap(hr_batch.astype(np.float32, copy=False), False)
    with Tape() as tape:
        loss = mse_loss(forward(params, model_cfg, x), y)
    backward(tape, loss)
    opt.step(params, lr)
    return loss.item()


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    history: list[dict] = field(default_factory=list)
    params: Optional[TsrNetParams] = None


def _echo_header(config: TrainConfig) -> str:
    adan_on = config.train.optimizer == "adan"
    return (f"# optimizer={config.train.optimizer} adan_enabled={str(adan_on).lower()} "
            f"ctmb_enabled={str(config.model.enable_ctmb).lower()} num_trees={config.model.num_trees} "
            f"crops_per_image={config.train.crops_per_image} patch_hr={config.patch_hr}\n")


def train(config: TrainConfig, resume: Optional[str] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run (or resume) training; returns paths of the final checkpoint and CSV log."""
    config.validate()
    out_dir = Path(config.data.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.effective.txt").write_text(_echo_header(config) + config.to_text(), encoding="utf-8")

    if not config.data.train_dir:
        raise ValueError("data.train_dir is not set")
    dataset = PatchDataset.from_dir(config.data.train_dir, config.scale, config.data.train_limit or None)

    if resume:
        ck = load_checkpoint(resume)
        if ck.model_config != config.model:
            raise ValueError("checkpoint model configuration differs from the run configuration")
        params = ck.params
        start_epoch = ck.epoch
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
        opt = Optimizer(config, params, ck.opt_state if ck.optimizer == config.train.optimizer else None)
    else:
        params = build(config.model, config.train.seed)
        start_epoch = 0
        rng = np.random.default_rng(config.train.seed)
        opt = Optimizer(config, params)

    log_path = out_dir / "train_log.csv"
    mode = "a" if resume and log_path.exists() else "w"
    history: list[dict] = []
    last_path = out_dir / "last.tsrn"

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(config.model, params, epoch, opt.kind, opt.state, rng.bit_generator.state,
                          dict(config.flat_items()))

    with open(log_path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if mode == "w":
            writer.writeheader()
        for epoch in range(start_epoch, config.train.epochs):
            lr = lr_at(epoch, config)
            t0 = time.perf_counter()
            losses = []
            try:
                for lr_b, hr_b in dataset.epoch_batches(rng, config.train.batch_size,
                                                        config.train.crops_per_image, config.patch_hr):
                    value = train_step(params, config.model, opt, lr_b, hr_b, lr)
                    if not math.isfinite(value):
                        raise NonFiniteError("non-finite loss")
                    losses.append(value)
            except NonFiniteError as exc:
                raise TrainingAborted(f"epoch {epoch + 1}: {exc}; last good checkpoint kept at {last_path}") from exc
            row = {"epoch": epoch + 1, "mean_loss": repr(float(np.mean(losses))), "lr": repr(lr),
                   "wall_time_s": f"{time.perf_counter() - t0:.3f}", "steps": len(losses)}
            writer.writerow(row)
            fh.flush()
            history.append(row)
            if on_epoch:
                on_epoch(row)
            done = epoch + 1
            if done % config.train.checkpoint_every == 0 or done == config.train.epochs:
                ck = snapshot(done)
                save_checkpoint(out_dir / f"epoch_{done:05d}.tsrn", ck)
                save_checkpoint(last_path, ck)
    return TrainResult(str(last_path), str(log_path), history, params)


# -- evaluation ----------------------------------------------------------------

def predict(params: TsrNetParams, model_cfg: TsrNetConfig, lr_img: np.ndarray) -> np.ndarray:
    """Whole-image SR of a [3, h, w] LR array; output clipped to [0, 1]."""
    dtype = next(iter(params.tensors.values())).dtype
    x = Tensor._wrap(np.ascontiguousarray(lr_img[None], dtype=dtype), False)
    out = forward(params, model_cfg, x)
    return np.clip(out.data[0], 0.0, 1.0)


def evaluate(hr_dir, scale: int, checkpoint: Optional[Checkpoint | str] = None,
             lr_dir=None, bicubic_only: bool = False,
             predictor: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> MetricReport:
    """Y-channel PSNR/SSIM (shave = scale) over every PNG in ``hr_dir``.

    The LR input is synthesised by bicubic downscaling unless ``lr_dir`` holds
    files with the same relative names.  ``predictor`` overrides the model.
    """
    check_scale(scale)
    if predictor is None:
        if bicubic_only:
            def predictor(lr_img):
                return bicubic_resize(lr_img, lr_img.shape[1] * scale, lr_img.shape[2] * scale)
        else:
            if checkpoint is None:
                raise ValueError("evaluate needs a checkpoint unless bicubic_only or a predictor is given")
            ck = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
            if ck.model_config.scale != scale:
                raise ValueError(f"checkpoint is for x{ck.model_config.scale}, requested x{scale}")

            def predictor(lr_img):
                return predict(ck.params, ck.model_config, lr_img)

    report = MetricReport()
    hr_root = Path(hr_dir)
    files = list_pngs(hr_root)
    if not files:
        raise ValueError(f"no PNG images found under {hr_dir}")
    for f in files:
        rel = os.path.relpath(f, hr_root)
        if lr_dir is not None:
            lr_img = load_png(Path(lr_dir) / rel).to_float()
            h, w = lr_img.shape[1] * scale, lr_img.shape[2] * scale
            hr_img = load_png(f).to_float()[:, :h, :w]
        else:
            pair = make_pairs(load_png(f), scale)
            lr_img, hr_img = pair.lr, pair.hr
        sr = np.clip(predictor(lr_img), 0.0, 1.0)
        if sr.shape != hr_img.shape:
            raise ValueError(f"{rel}: prediction shape {sr.shape} does not match HR {hr_img.shape}")
        p, s = score_pair(sr, hr_img, shave=scale)
        report.add(rel, p, s)
    return report
