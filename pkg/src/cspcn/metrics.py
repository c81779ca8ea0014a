"""Restoration quality metrics and their delimited report format."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .data import rgb_to_luma

CSV_HEADER = "name,psnr_db,ssim"


def psnr(reference: np.ndarray, test: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in decibels, computed in float64.

    Identical inputs yield positive infinity.
    """
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {test.shape}")
    diff = reference.astype(np.float64) - test.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def ssim(reference: np.ndarray, test: np.ndarray, data_range: float = 1.0) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Single scale, window sigma 1.5, stability constants (0.01*R)^2 and
    (0.03*R)^2.  Channels are scored independently and averaged.  An
    image compared against itself scores exactly 1.0.
    """
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {test.shape}")
    if reference.ndim == 2:
        reference = reference[:, :, None]
        test = test[:, :, None]
    h, w = reference.shape[:2]
    size = 11
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than the {size}x{size} window")
    window = _gaussian_window(size)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    margin = size // 2

    def smooth(img: np.ndarray) -> np.ndarray:
        out = cv2.sepFilter2D(img, cv2.CV_64F, window, window,
                              borderType=cv2.BORDER_REPLICATE)
        return out[margin:h - margin, margin:w - margin]

    scores = []
    for c in range(reference.shape[2]):
        a = reference[:, :, c].astype(np.float64)
        b = test[:, :, c].astype(np.float64)
        mu_a, mu_b = smooth(a), smooth(b)
        var_a = smooth(a * a) - mu_a * mu_a
        var_b = smooth(b * b) - mu_b * mu_b
        cov = smooth(a * b) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def compare(reference: np.ndarray, test: np.ndarray, quantize: bool = False,
            luma: bool = False) -> tuple[float, float]:
    """PSNR and SSIM of a restored image against its reference.

    quantize snaps both to the 8-bit grid first; luma scores only the
    BT.601 luminance of color inputs.
    """
    if luma and reference.ndim == 3 and reference.shape[2] == 3:
        reference, test = rgb_to_luma(reference), rgb_to_luma(test)
    if quantize:
        reference = np.rint(np.clip(reference, 0.0, 1.0) * 255.0) / 255.0
        test = np.rint(np.clip(test, 0.0, 1.0) * 255.0) / 255.0
    return psnr(reference, test), ssim(reference, test)


@dataclass(frozen=True)
class MetricReport:
    name: str
    psnr_db: float
    ssim: float


def _format_row(name: str, psnr_db: float, ssim_value: float) -> str:
    p = "inf" if math.isinf(psnr_db) else f"{psnr_db:.4f}"
    return f"{name},{p},{ssim_value:.6f}"


def write_metrics_csv(path: str | Path, reports: list[MetricReport]) -> None:
    """Write per-image rows plus a MEAN summary row, atomically."""
    if not reports:
        raise ValueError("no metric reports to write")
    path = Path(path)
    lines = [CSV_HEADER]
    lines.extend(_format_row(r.name, r.psnr_db, r.ssim) for r in reports)
    mean_psnr = sum(r.psnr_db for r in reports) / len(reports)
    mean_ssim = sum(r.ssim for r in reports) / len(reports)
    lines.append(_format_row("MEAN", mean_psnr, mean_ssim))
    tmp = path.with_name(path.name + f".part{os.getpid()}")
    try:
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)
