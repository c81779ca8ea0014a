"""Attention and pre-processing building blocks.

Channel and spatial attention run as parallel branches whose sum forms the
dual attention block; the multi-layer feature processor and the cascading
block build on it.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .numerics import SameConv2d, global_avg_pool


class ChannelAttentionBlock(nn.Module):
    """Gates each channel by a squeeze-excite factor in (0, 1)."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError(f"channels ({channels}) must divide by reduction ({reduction})")
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1, bias=False)
        self.excite = nn.Conv2d(channels // reduction, channels, 1, bias=False)

    def gate(self, x: Tensor) -> Tensor:
        return torch.sigmoid(self.excite(torch.relu(self.squeeze(global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class SpatialAttentionBlock(nn.Module):
    """Gates each position by a map built from cross-channel avg/max pooling."""

    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = SameConv2d(2, 1, kernel, bias=False)

    def gate(self, x: Tensor) -> Tensor:
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class DualAttentionBlock(nn.Module):
    """Sum of the parallel channel and spatial attention branches."""

    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        self.channel = ChannelAttentionBlock(channels, reduction)
        self.spatial = SpatialAttentionBlock(spatial_kernel)

    def forward(self, x: Tensor) -> Tensor:
        return self.channel(x) + self.spatial(x)


class MultiLayerFeatureProcessor(nn.Module):
    """Dilated conv stack with a terminal dual-attention monitor.

    Widens the receptive field by the sum of the dilation rates while
    keeping the spatial shape; ``norm=False`` drops the batch norms
    (used by structural tests).
    """

    def __init__(self, channels: int, dilations=(1, 2, 3, 2, 1), *,
                 reduction: int = 8, norm: bool = True):
        super().__init__()
        layers: list[nn.Module] = []
        for d in dilations:
            layers.append(SameConv2d(channels, channels, 3, dilation=d, bias=False))
            if norm:
                layers.append(nn.BatchNorm2d(channels))
            layers.append(nn.ReLU(inplace=True))
        self.stack = nn.Sequential(*layers)
        self.monitor = DualAttentionBlock(channels, reduction)

    def forward(self, x: Tensor) -> Tensor:
        return self.monitor(self.stack(x))


class CascadeUnit(nn.Module):
    """One cascade step: dual attention, pooled channel rescale, 3x3 conv."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        self.dab = DualAttentionBlock(channels, reduction)
        self.pool_gate = nn.Conv2d(channels, channels, 1)
        self.conv = SameConv2d(channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        h = self.dab(x)
        h = h * torch.sigmoid(self.pool_gate(global_avg_pool(h)))
        return self.conv(h)


class CascadeBlock(nn.Module):
    """Chain of cascade units under one residual connection.

    With all conv weights (and biases) zeroed the chain emits zero, so the
    block reduces to the identity.
    """

    def __init__(self, channels: int, units: int = 4, reduction: int = 8):
        super().__init__()
        self.units = nn.ModuleList(CascadeUnit(channels, reduction) for _ in range(units))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for unit in self.units:
            h = unit(h)
        return x + h
