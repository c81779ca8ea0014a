"""Multi-conv attention controller: stage-end fusion and cross-stage transfer.

Four separable convolutions generate two content streams plus a key and a
query; the key/query cross-covariance (a channels-by-channels map, row
softmaxed) mixes the summed content streams.  Dilated convolutions at
several rates consolidate the result, a pooled gate recalibrates it, and a
zero-initialized projection feeds the residual — so a fresh controller is
exactly the identity.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .numerics import SameConv2d, global_avg_pool, softmax_rows


def attention_map(key: Tensor, query: Tensor, temperature: Tensor | None = None) -> Tensor:
    """Row-stochastic channel-to-channel attention from flattened features.

    ``key`` is (..., C, N) with each channel flattened row-major; ``query``
    is the transposed layout (..., N, C).  Rows of the result sum to one.
    """
    if key.shape[-1] != query.shape[-2]:
        raise ValueError(f"shape mismatch: key {tuple(key.shape)} vs query {tuple(query.shape)}")
    scores = key @ query
    if temperature is not None:
        scores = scores * temperature
    return softmax_rows(scores)


class SeparableConv2d(nn.Module):
    """Depthwise 3x3 followed by a pointwise 1x1 projection."""

    def __init__(self, channels: int):
        super().__init__()
        self.depthwise = SameConv2d(channels, channels, 3, groups=channels, bias=False)
        self.pointwise = nn.Conv2d(channels, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


class MultiConvAttentionController(nn.Module):
    def __init__(self, channels: int, dilations=(1, 2, 3), *, learnable_temperature: bool = False):
        super().__init__()
        self.gen_content_a = SeparableConv2d(channels)
        self.gen_content_b = SeparableConv2d(channels)
        self.gen_key = SeparableConv2d(channels)
        self.gen_query = SeparableConv2d(channels)
        self.fuse = nn.ModuleList(
            SameConv2d(channels, channels, 3, dilation=d) for d in dilations)
        self.pool_gate = nn.Conv2d(channels, channels, 1)
        self.project = nn.Conv2d(channels, channels, 1)
        self.project.zero_init = True
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)
        self.temperature = nn.Parameter(torch.ones(())) if learnable_temperature else None

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        content = (self.gen_content_a(x) + self.gen_content_b(x)).reshape(b, c, h * w)
        key = self.gen_key(x).reshape(b, c, h * w)
        query = self.gen_query(x).reshape(b, c, h * w).transpose(1, 2)
        att = attention_map(key, query, self.temperature)
        mixed = (att @ content).reshape(b, c, h, w)
        fused = self.fuse[0](mixed)
        for conv in self.fuse[1:]:
            fused = fused + conv(mixed)
        gated = fused * torch.sigmoid(self.pool_gate(global_avg_pool(fused)))
        return x + self.project(gated)
