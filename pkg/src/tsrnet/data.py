"""PNG I/O, bicubic degradation, and deterministic patch batching."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

SCALES = (2, 3, 4)
CUBIC_A = -0.5


@dataclass
class ImageRGB:
    pixels: np.ndarray  # uint8 [H, W, 3]
    path: Optional[str] = None

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"ImageRGB needs uint8 [H, W, 3] samples, got {self.pixels.dtype} {self.pixels.shape}")
        if min(self.pixels.shape[:2]) < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_float(self) -> np.ndarray:
        """[3, H, W] float32 in [0, 1]."""
        return (self.pixels.transpose(2, 0, 1).astype(np.float32) / 255.0)

    @classmethod
    def from_float(cls, chw: np.ndarray, path: Optional[str] = None) -> "ImageRGB":
        hwc = np.clip(np.asarray(chw, dtype=np.float64), 0.0, 1.0).transpose(1, 2, 0)
        return cls(np.ascontiguousarray(np.round(hwc * 255.0).astype(np.uint8)), path)


@dataclass
class SamplePair:
    lr: np.ndarray  # [3, h, w] in [0, 1]
    hr: np.ndarray  # [3, h*s, w*s] in [0, 1]
    scale: int

    def __post_init__(self):
        s = self.scale
        if self.hr.shape[1:] != (self.lr.shape[1] * s, self.lr.shape[2] * s):
            raise ValueError(f"hr {self.hr.shape} is not {s}x lr {self.lr.shape}")


def load_png(path) -> ImageRGB:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I", "F") or mode.startswith("I;"):
            raise ValueError(f"unsupported bit depth: {path} has mode {mode}; expected 8-bit RGB or grayscale")
        if mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        elif mode in ("RGB", "RGBA", "P", "LA", "1"):
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        else:
            raise ValueError(f"unsupported image mode {mode} in {path}")
    return ImageRGB(np.ascontiguousarray(arr), path)


def save_png(img: ImageRGB, path) -> None:
    path = os.fspath(path)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


def list_pngs(root) -> list[str]:
    """All ``.png`` files under ``root`` (recursive), sorted lexicographically."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    return sorted(str(p) for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".png")


# -- bicubic resampling -------------------------------------------------------

def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense [out_len, in_len] interpolation matrix for one axis.

    Output sample ``i`` sits at input coordinate ``(i + 0.5) / scale - 0.5``.
    When shrinking, the kernel is stretched by ``1 / scale`` so it low-passes
    before decimating.  Out-of-range taps are clamped to the edge sample.
    """
    scale = out_len / in_len
    stretch = antialias and scale < 1
    width = 4.0 / scale if stretch else 4.0
    centers = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = centers[:, None] - idx
    weights = scale * cubic_kernel(scale * dist) if stretch else cubic_kernel(dist)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    mat = np.zeros((out_len, in_len), dtype=np.float64)
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.reshape(-1)), weights.reshape(-1))
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resize of a float array laid out as [..., H, W].

    Values are expected in [0, 1]; the result is clamped to that range and
    returned in the input's float dtype.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    arr = np.asarray(img)
    dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
    h, w = arr.shape[-2:]
    mh = resize_matrix(h, out_h, antialias)
    mw = resize_matrix(w, out_w, antialias)
    out = np.matmul(np.matmul(mh, arr.astype(np.float64)), mw.T)
    return np.clip(out, 0.0, 1.0).astype(dtype)


# -- pairs and patches ---------------------------------------------------------

def check_scale(s: int) -> int:
    if s not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {s}")
    return s


def make_pairs(hr: ImageRGB, s: int) -> SamplePair:
    """Crop HR to a multiple of ``s`` and synthesise LR by bicubic downscaling."""
    check_scale(s)
    if hr.height < s or hr.width < s:
        raise ValueError(f"image {hr.height}x{hr.width} is smaller than scale {s}")
    h, w = (hr.height // s) * s, (hr.width // s) * s
    hr_f = hr.to_float()[:, :h, :w]
    lr = bicubic_resize(hr_f, h // s, w // s)
    return SamplePair(np.ascontiguousarray(lr), np.ascontiguousarray(hr_f), s)


def default_patch_hr(s: int, nominal: int = 128) -> int:
    return s * (nominal // s)


def random_crop_origin(rng: np.random.Generator, pair: SamplePair, patch_lr: int) -> tuple[int, int]:
    h, w = pair.lr.shape[1:]
    if patch_lr > h or patch_lr > w:
        raise ValueError(f"patch of {patch_lr} LR pixels is larger than image {h}x{w}")
    return int(rng.integers(0, h - patch_lr + 1)), int(rng.integers(0, w - patch_lr + 1))


def crop_at(pair: SamplePair, y: int, x: int, patch_lr: int) -> SamplePair:
    s = pair.scale
    lr = pair.lr[:, y:y + patch_lr, x:x + patch_lr]
    hr = pair.hr[:, s * y:s * (y + patch_lr), s * x:s * (x + patch_lr)]
    return SamplePair(np.ascontiguousarray(lr), np.ascontiguousarray(hr), s)


def crop_patches(pair: SamplePair, patch_hr: int, rng_seed, count: Optional[int] = None) -> Iterator[SamplePair]:
    """Uniformly random, scale-aligned crops of ``pair``.

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``.
    The stream is endless unless ``count`` is given.
    """
    s = pair.scale
    if patch_hr % s:
        raise ValueError(f"patch_hr={patch_hr} is not divisible by scale {s}")
    patch_lr = patch_hr // s
    h, w = pair.lr.shape[1:]
    if patch_lr > h or patch_lr > w:
        raise ValueError(f"patch of {patch_hr} HR pixels is larger than image {h * s}x{w * s}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    def stream():
        n = 0
        while count is None or n < count:
            y, x = random_crop_origin(rng, pair, patch_lr)
            yield crop_at(pair, y, x, patch_lr)
            n += 1

    return stream()


class PatchDataset:
    """In-memory set of LR/HR pairs built from a directory of PNGs."""

    def __init__(self, pairs: Sequence[SamplePair], names: Sequence[str]):
        if not pairs:
            raise ValueError("dataset is empty")
        self.pairs = list(pairs)
        self.names = list(names)

    @classmethod
    def from_dir(cls, root, scale: int, limit: Optional[int] = None) -> "PatchDataset":
        files = list_pngs(root)
        if limit is not None:
            files = files[:limit]
        if not files:
            raise ValueError(f"no PNG images found under {root}")
        pairs = [make_pairs(load_png(f), scale) for f in files]
        return cls(pairs, files)

    def __len__(self) -> int:
        return len(self.pairs)

    def epoch_batches(self, rng: np.random.Generator, batch_size: int, crops_per_image: int,
                      patch_hr: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """One epoch of (lr, hr) batches; order depends only on ``rng``'s state."""
        s = self.pairs[0].scale
        if patch_hr % s:
            raise ValueError(f"patch_hr={patch_hr} is not divisible by scale {s}")
        patch_lr = patch_hr // s
        plan = []
        for i, pair in enumerate(self.pairs):
            for _ in range(crops_per_image):
                plan.append((i, *random_crop_origin(rng, pair, patch_lr)))
        order = rng.permutation(len(plan))
        for start in range(0, len(order), batch_size):
            chunk = [crop_at(self.pairs[plan[k][0]], plan[k][1], plan[k][2], patch_lr)
                     for k in order[start:start + batch_size]]
            yield np.stack([c.lr for c in chunk]), np.stack([c.hr for c in chunk])
