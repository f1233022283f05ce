"""Run configuration and the flat ``section.key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .adan import AdamConfig, AdanConfig
from .data import default_patch_hr
from .model import TsrNetConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainSettings:
    epochs: int = 1200
    batch_size: int = 64
    base_lr: float = 4e-4
    lr_halve_every: int = 200
    seed: int = 0
    weight_decay: float = 0.0
    optimizer: str = "adan"  # "adan" or "adam"
    crops_per_image: int = 16
    patch_hr: int = 0  # 0 -> scale * (128 // scale)
    checkpoint_every: int = 50


@dataclass
class DataSettings:
    train_dir: str = ""
    train_limit: int = 0  # 0 -> every image
    output_dir: str = "runs/default"


@dataclass
class TrainConfig:
    model: TsrNetConfig = field(default_factory=TsrNetConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    adan: AdanConfig = field(default_factory=AdanConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    data: DataSettings = field(default_factory=DataSettings)

    SECTIONS = ("model", "train", "adan", "adam", "data")
    # learning rate and decay come from the train section and the schedule
    DERIVED = frozenset({"adan.lr", "adan.weight_decay", "adam.lr", "adam.weight_decay"})

    @property
    def scale(self) -> int:
        return self.model.scale

    @property
    def patch_hr(self) -> int:
        return self.train.patch_hr or default_patch_hr(self.model.scale)

    def validate(self) -> "TrainConfig":
        try:
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc
        t = self.train
        for name in ("epochs", "batch_size", "lr_halve_every", "crops_per_image", "checkpoint_every"):
            if getattr(t, name) < 1:
                raise ConfigError(f"train.{name} must be a positive integer")
        if t.base_lr <= 0:
            raise ConfigError("train.base_lr must be positive")
        if t.weight_decay < 0:
            raise ConfigError("train.weight_decay must be non-negative")
        if t.optimizer not in ("adan", "adam"):
            raise ConfigError(f"train.optimizer must be 'adan' or 'adam', got {t.optimizer!r}")
        if self.patch_hr % self.model.scale:
            raise ConfigError(f"train.patch_hr={self.patch_hr} is not divisible by scale {self.model.scale}")
        try:
            self.adan.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def flat_items(self) -> list[tuple[str, object]]:
        items = []
        for section in self.SECTIONS:
            for f in dataclasses.fields(getattr(self, section)):
                if f"{section}.{f.name}" in self.DERIVED:
                    continue
                items.append((f"{section}.{f.name}", getattr(getattr(self, section), f.name)))
        return items

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.flat_items())

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.strip().partition(".")
        if section not in self.SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(self, section)
        names = {f.name for f in dataclasses.fields(target)}
        if name not in names or f"{section}.{name}" in self.DERIVED:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(target, name)
        setattr(target, name, parse_value(raw.strip(), type(current), key))


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_value(raw: str, kind: type, key: str = ""):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind.__name__} for {key}") from None
    return raw


def parse_lines(lines: Iterable[str], config: TrainConfig | None = None) -> TrainConfig:
    config = config or TrainConfig()
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line.strip()!r}")
        key, _, value = text.partition("=")
        config.set(key, value)
    return config


def load_config(path, overrides: Iterable[str] = ()) -> TrainConfig:
    """Read a config file, then apply ``key=value`` overrides in order."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = parse_lines(p.read_text(encoding="utf-8").splitlines())
    return apply_overrides(config, overrides)


def apply_overrides(config: TrainConfig, overrides: Iterable[str]) -> TrainConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        config.set(key, value)
    return config.validate()
