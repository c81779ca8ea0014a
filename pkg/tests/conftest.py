"""Shared fixtures and independent reference implementations.

The reference helpers here are deliberately written as plain numpy
loops and formulas, so tests compare the package against a second,
unrelated derivation instead of against itself.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from cspcn.config import LossConfig, ModelConfig, TrainConfig


def mirror_index(i: int, n: int) -> int:
    """Triangular-wave (no border repeat) index for position i on a
    length-n axis; valid for any i."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    m = i % period
    return m if m < n else period - m


def ref_pad2d(x: np.ndarray, ph: int, pw: int, mode: str = "reflect") -> np.ndarray:
    """Pad the last two axes of (..., H, W) by ph/pw on each side."""
    h, w = x.shape[-2], x.shape[-1]
    if mode == "zero":
        widths = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
        return np.pad(x, widths)
    rows = [mirror_index(i, h) for i in range(-ph, h + ph)]
    cols = [mirror_index(j, w) for j in range(-pw, w + pw)]
    return x[..., rows, :][..., cols]


def ref_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
               dilation: int = 1, groups: int = 1,
               padding: str = "reflect") -> np.ndarray:
    """Sliding-window same convolution, straight from the definition.

    x is (N, Cin, H, W); weight is (Cout, Cin/groups, k, k).  Slow and
    loop-based on purpose.
    """
    n, cin, h, w = x.shape
    cout, cpg, k, _ = weight.shape
    pad = dilation * (k - 1) // 2
    xp = ref_pad2d(x, pad, pad, padding)
    out = np.zeros((n, cout, h, w), dtype=np.float64)
    out_per_group = cout // groups
    for b in range(n):
        for o in range(cout):
            g = o // out_per_group
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for ci in range(cpg):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (weight[o, ci, ki, kj]
                                        * xp[b, g * cpg + ci,
                                             i + ki * dilation, j + kj * dilation])
                    out[b, o, i, j] = acc
            if bias is not None:
                out[b, o] += bias[o]
    return out


def ref_softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ref_gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def ref_ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Valid-window SSIM via explicit per-window statistics.

    Works on (H, W) or (H, W, C) arrays; windows are 11x11 with the
    separable Gaussian of sigma 1.5.
    """
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    size = 11
    g1 = ref_gaussian_window(size)
    kernel = np.outer(g1, g1)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    h, w, channels = a.shape
    scores = []
    for c in range(channels):
        x = a[:, :, c].astype(np.float64)
        y = b[:, :, c].astype(np.float64)
        vals = []
        for top in range(h - size + 1):
            for left in range(w - size + 1):
                wx = x[top:top + size, left:left + size]
                wy = y[top:top + size, left:left + size]
                mu_x = float((kernel * wx).sum())
                mu_y = float((kernel * wy).sum())
                var_x = float((kernel * wx * wx).sum()) - mu_x * mu_x
                var_y = float((kernel * wy * wy).sum()) - mu_y * mu_y
                cov = float((kernel * wx * wy).sum()) - mu_x * mu_y
                num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
                den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
                vals.append(num / den)
        scores.append(float(np.mean(vals)))
    return float(np.mean(scores))


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    return ModelConfig(base_width=8, aed_scales=2, mlfp_dilations=(1, 2),
                       mcac_dilations=(1, 2), cascade_dabs=1, dab_reduction=4)


@pytest.fixture
def tiny_loss_cfg() -> LossConfig:
    return LossConfig()


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(batch_size=2, patch_size=16, iterations=4,
                       checkpoint_interval=2, sigma=25.0, val_fraction=0.0)


@pytest.fixture
def image_dir(tmp_path):
    """Write a few deterministic small PNGs and return their directory."""
    import cv2

    root = tmp_path / "images"
    root.mkdir()
    rng = np.random.default_rng(11)
    for i, (h, w) in enumerate(((40, 48), (48, 40), (44, 44))):
        img = (rng.random((h, w, 3)) * 255).astype(np.uint8)
        cv2.imwrite(str(root / f"im{i}.png"), img)
    return root


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
