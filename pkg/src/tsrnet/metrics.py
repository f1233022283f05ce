"""Luminance PSNR/SSIM with border shaving, and per-image reports."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

# ITU-R BT.601 studio swing, RGB in [0, 1] -> Y in [16, 235]
Y_COEFFS = np.array([65.481, 128.553, 24.966])
Y_OFFSET = 16.0

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
PEAK = 255.0


def to_y_channel(img: np.ndarray) -> np.ndarray:
    """[3, H, W] float RGB in [0, 1] -> [H, W] float64 luminance on the 8-bit scale."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"to_y_channel expects [3, H, W], got {img.shape}")
    # elementwise so equal pixels map to equal Y whatever the memory layout
    return Y_COEFFS[0] * img[0] + Y_COEFFS[1] * img[1] + Y_COEFFS[2] * img[2] + Y_OFFSET


def shave_border(img: np.ndarray, shave: int) -> np.ndarray:
    if shave == 0:
        return img
    h, w = img.shape[-2:]
    if 2 * shave >= min(h, w):
        raise ValueError(f"shave={shave} leaves nothing of a {h}x{w} image")
    return img[..., shave:h - shave, shave:w - shave]


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """PSNR in dB for 8-bit-scale images; ``inf`` when they are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    a, b = shave_border(a, shave), shave_border(b, shave)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation, valid positions only
    k = g.size
    h, w = img.shape
    rows = sum(g[i] * img[i:h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:w - k + 1 + j] for j in range(k))


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), mean over valid windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    a, b = shave_border(a, shave), shave_border(b, shave)
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"ssim needs at least {SSIM_WIN}x{SSIM_WIN} pixels after shaving, got {a.shape}")
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class ImageScore:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    per_image: list[ImageScore] = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    @property
    def psnr_db(self) -> float:
        return float(np.mean([s.psnr_db for s in self.per_image])) if self.per_image else math.nan

    @property
    def ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.per_image])) if self.per_image else math.nan

    def add(self, name: str, psnr_db: float, ssim_value: float) -> None:
        self.per_image.append(ImageScore(name, psnr_db, ssim_value))

    def summary(self) -> str:
        return f"images={self.n_images} psnr_db={self.psnr_db:.4f} ssim={self.ssim:.4f}"

    def write_csv(self, path) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_name", "psnr_db", "ssim"])
            for s in self.per_image:
                writer.writerow([s.name, f"{s.psnr_db:.6f}", f"{s.ssim:.6f}"])


def score_pair(sr_rgb: np.ndarray, hr_rgb: np.ndarray, shave: int) -> tuple[float, float]:
    """Y-channel PSNR and SSIM of two [3, H, W] float RGB images."""
    ya, yb = to_y_channel(sr_rgb), to_y_channel(hr_rgb)
    return psnr(ya, yb, shave), ssim(ya, yb, shave)
