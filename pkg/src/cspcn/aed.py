"""Attention encoder-decoder: U-shaped multi-scale feature extractor.

Stride-2 convs downsample (channels double per level, capped at 4x the base
width); the decoder mirrors each level with bilinear upsampling, a 1x1
channel reduction, and two 3x3 convs.  Each skip connection passes through
exactly one dual attention block and is fused by addition.  A 1x1 head
projects the full-resolution decoder features to an image, supervised by
the reconstruction term of the composite loss.
"""

from __future__ import annotations

from torch import Tensor, nn

from .blocks import DualAttentionBlock
from .numerics import SameConv2d, bilinear_upsample, pad2d


def _conv_pair(channels: int) -> nn.Sequential:
    return nn.Sequential(
        SameConv2d(channels, channels, 3), nn.ReLU(inplace=True),
        SameConv2d(channels, channels, 3), nn.ReLU(inplace=True),
    )


class Downsample(nn.Module):
    """Reflect-padded 3x3 stride-2 conv; halves even spatial dims exactly."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(pad2d(x, 1, 1, "reflect"))


class AttentionEncoderDecoder(nn.Module):
    def __init__(self, channels: int, image_channels: int, scales: int = 3, *,
                 reduction: int = 8, max_width_mult: int = 4):
        super().__init__()
        if scales < 2:
            raise ValueError(f"need at least two scales, got {scales}")
        self.scales = scales
        widths = [min(channels * 2 ** i, channels * max_width_mult) for i in range(scales)]
        self.widths = widths
        self.encoders = nn.ModuleList(_conv_pair(w) for w in widths)
        self.downs = nn.ModuleList(
            Downsample(widths[i], widths[i + 1]) for i in range(scales - 1))
        self.skip_dabs = nn.ModuleList(
            DualAttentionBlock(widths[i], reduction) for i in range(scales - 1))
        self.reduces = nn.ModuleList(
            nn.Conv2d(widths[i + 1], widths[i], 1) for i in range(scales - 1))
        self.decoders = nn.ModuleList(_conv_pair(widths[i]) for i in range(scales - 1))
        self.decode_head = nn.Conv2d(channels, image_channels, 1)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns full-resolution features and the decoded image."""
        h, w = x.shape[-2], x.shape[-1]
        multiple = 2 ** (self.scales - 1)
        if h % multiple or w % multiple:
            raise ValueError(
                f"spatial dims ({h}x{w}) must divide by {multiple}; pad the input first")
        skips = []
        feat = x
        for level in range(self.scales - 1):
            feat = self.encoders[level](feat)
            skips.append(feat)
            feat = self.downs[level](feat)
        feat = self.encoders[-1](feat)
        # spatial extent at the deepest level, kept visible for diagnostics
        self.bottleneck_hw = (feat.shape[-2], feat.shape[-1])
        for level in reversed(range(self.scales - 1)):
            feat = self.reduces[level](bilinear_upsample(feat, 2))
            feat = feat + self.skip_dabs[level](skips[level])
            feat = self.decoders[level](feat)
        return feat, self.decode_head(feat)
