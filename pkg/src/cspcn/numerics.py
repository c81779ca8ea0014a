"""Differentiable primitives shared by every block.

All convolutions here are shape-preserving ("same" padding): feature convs
reflect at the borders, with an optional zero-padded variant where a test
needs the simpler boundary.  Reflection falls back to an index-based pad so
arbitrarily small inputs and arbitrarily large pads both work.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn


def reflect_indices(n: int, before: int, after: int, device=None) -> Tensor:
    """Border-mirroring sample indices for padding a length-``n`` axis.

    Uses the triangular-wave extension (no border repeat); a length-1 axis
    degenerates to replication.  Valid for any pad size.
    """
    idx = torch.arange(-before, n + after, device=device)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    m = torch.remainder(idx, period)
    return torch.where(m < n, m, period - m)


def pad2d(x: Tensor, pad_h: int, pad_w: int, mode: str = "reflect") -> Tensor:
    """Pad the last two axes by ``pad_h``/``pad_w`` on each side."""
    if pad_h == 0 and pad_w == 0:
        return x
    if mode == "zero":
        return F.pad(x, (pad_w, pad_w, pad_h, pad_h))
    if mode != "reflect":
        raise ValueError(f"unknown padding mode {mode!r}")
    h, w = x.shape[-2], x.shape[-1]
    if pad_h < h and pad_w < w and h > 1 and w > 1:
        return F.pad(x, (pad_w, pad_w, pad_h, pad_h), mode="reflect")
    rows = reflect_indices(h, pad_h, pad_h, device=x.device)
    cols = reflect_indices(w, pad_w, pad_w, device=x.device)
    return x[..., rows[:, None], cols]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           dilation: int = 1, groups: int = 1, padding: str = "reflect") -> Tensor:
    """Shape-preserving 2-D convolution with an odd square kernel.

    ``weight`` is laid out (out_channels, in_channels/groups, k, k); the
    output has the input's spatial shape for every dilation rate.
    """
    k = weight.shape[-1]
    if weight.shape[-2] != k or k % 2 == 0:
        raise ValueError(f"kernel must be odd and square, got {tuple(weight.shape[-2:])}")
    in_channels = weight.shape[1] * groups
    if x.shape[1] != in_channels:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {in_channels}")
    pad = dilation * (k - 1) // 2
    return F.conv2d(pad2d(x, pad, pad, padding), weight, bias, dilation=dilation, groups=groups)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, kept as a (batch, channels, 1, 1) map."""
    return x.mean(dim=(-2, -1), keepdim=True)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax over the last axis; rows come back summing to one.

    Raises on NaN input rather than propagating it silently.
    """
    if torch.isnan(m).any():
        raise ValueError("softmax_rows: NaN in input")
    return torch.softmax(m, dim=-1)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling (half-pixel-centered sampling)."""
    if factor < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    h, w = x.shape[-2], x.shape[-1]
    return F.interpolate(x, size=(h * factor, w * factor), mode="bilinear", align_corners=False)


class SameConv2d(nn.Module):
    """Odd-kernel conv that preserves spatial shape (reflect-padded)."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, *,
                 dilation: int = 1, groups: int = 1, bias: bool = True,
                 padding: str = "reflect", zero_init: bool = False):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {kernel}")
        self.dilation = dilation
        self.padding = padding
        self.conv = nn.Conv2d(in_channels, out_channels, kernel,
                              dilation=dilation, groups=groups, bias=bias)
        self.conv.zero_init = zero_init
        if zero_init:
            nn.init.zeros_(self.conv.weight)
            if self.conv.bias is not None:
                nn.init.zeros_(self.conv.bias)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.conv.weight, self.conv.bias,
                      dilation=self.dilation, groups=self.conv.groups, padding=self.padding)
