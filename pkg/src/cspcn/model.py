"""Progressive three-stage denoiser assembly.

Context-mining stages run the feature processor, the encoder-decoder, and
(optionally) the attention controller in series; the space-synthesis stage
runs the feature processor and the cascading block in parallel and fuses
them.  Each stage embeds the degraded input, adds the previous stage's
features, and predicts a residual over the input through a zero-initialized
image head — so a freshly initialized network is exactly the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .aed import AttentionEncoderDecoder
from .blocks import CascadeBlock, MultiLayerFeatureProcessor
from .config import ModelConfig
from .mcac import MultiConvAttentionController
from .numerics import SameConv2d, reflect_indices


@dataclass
class ForwardResult:
    """Outputs of one training-mode pass: one image per stage, plus the
    decoded images of the encoder-decoder stages (at most two)."""

    stage_outputs: list[Tensor]
    decoded_outputs: list[Tensor]


class ContextStage(nn.Module):
    """Serial context-mining stage: processor -> encoder-decoder -> controller."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_width
        self.mlfp = MultiLayerFeatureProcessor(c, cfg.mlfp_dilations, reduction=cfg.dab_reduction)
        self.aed = AttentionEncoderDecoder(c, cfg.image_channels, cfg.aed_scales,
                                           reduction=cfg.dab_reduction)
        self.mcac = (MultiConvAttentionController(
            c, cfg.mcac_dilations, learnable_temperature=cfg.mcac_temperature)
            if cfg.use_mcac else None)

    def forward(self, e: Tensor) -> tuple[Tensor, Tensor | None]:
        feat, decoded = self.aed(self.mlfp(e))
        if self.mcac is not None:
            feat = self.mcac(feat)
        return feat, decoded


class SpaceStage(nn.Module):
    """Parallel space-synthesis stage: processor and cascade fused by
    addition plus a 3x3 conv."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_width
        self.mlfp = MultiLayerFeatureProcessor(c, cfg.mlfp_dilations, reduction=cfg.dab_reduction)
        self.cascade = CascadeBlock(c, cfg.cascade_dabs, cfg.dab_reduction)
        self.fuse = SameConv2d(c, c, 3)

    def forward(self, e: Tensor) -> tuple[Tensor, None]:
        return self.fuse(self.mlfp(e) + self.cascade(e)), None


class AedStage(nn.Module):
    """Ablation stage: encoder-decoder only."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.aed = AttentionEncoderDecoder(cfg.base_width, cfg.image_channels,
                                           cfg.aed_scales, reduction=cfg.dab_reduction)

    def forward(self, e: Tensor) -> tuple[Tensor, Tensor]:
        return self.aed(e)


class MlfpStage(nn.Module):
    """Ablation stage: feature processor only."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.mlfp = MultiLayerFeatureProcessor(cfg.base_width, cfg.mlfp_dilations,
                                               reduction=cfg.dab_reduction)

    def forward(self, e: Tensor) -> tuple[Tensor, None]:
        return self.mlfp(e), None


_STAGE_TYPES = {"cm2s": ContextStage, "3s": SpaceStage, "aed": AedStage, "mlfp": MlfpStage}


class CSPCN(nn.Module):
    """The assembled progressive denoiser."""

    def __init__(self, cfg: ModelConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        kinds = cfg.resolved_stage_kinds()
        c, img = cfg.base_width, cfg.image_channels
        self.embeds = nn.ModuleList(SameConv2d(img, c, 3) for _ in kinds)
        self.stages = nn.ModuleList(_STAGE_TYPES[k](cfg) for k in kinds)
        self.heads = nn.ModuleList(SameConv2d(c, img, 3, zero_init=True) for _ in kinds)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic re-initialization: fan-in-scaled normal conv
        weights, zero biases, zeroed residual-terminal projections."""
        g = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                if getattr(m, "zero_init", False):
                    nn.init.zeros_(m.weight)
                else:
                    fan_in = (m.in_channels // m.groups) * m.kernel_size[0] * m.kernel_size[1]
                    with torch.no_grad():
                        m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=g)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                m.reset_running_stats()
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, MultiConvAttentionController) and m.temperature is not None:
                nn.init.ones_(m.temperature)

    def forward(self, x0: Tensor) -> ForwardResult:
        if x0.ndim != 4 or x0.shape[1] != self.cfg.image_channels:
            raise ValueError(
                f"expected (batch, {self.cfg.image_channels}, H, W) input, got {tuple(x0.shape)}")
        stage_outputs: list[Tensor] = []
        decoded_outputs: list[Tensor] = []
        prev_feat: Tensor | None = None
        for embed, stage, head in zip(self.embeds, self.stages, self.heads):
            e = embed(x0)
            if prev_feat is not None:
                e = e + prev_feat
            feat, decoded = stage(e)
            if decoded is not None:
                decoded_outputs.append(decoded)
            stage_outputs.append(head(feat) + x0)
            prev_feat = feat
        return ForwardResult(stage_outputs, decoded_outputs)

    def denoise(self, x0: Tensor) -> Tensor:
        """Eval-mode restoration of arbitrarily sized images.

        Pads to the required divisibility, runs the forward pass, crops
        back, and clips to [0, 1]; returns the final stage output.
        """
        was_training = self.training
        self.eval()
        try:
            padded, crop = pad_to_multiple(x0, self.cfg.pad_multiple())
            with torch.no_grad():
                out = self.forward(padded).stage_outputs[-1]
        finally:
            self.train(was_training)
        return crop_to(out, crop).clamp(0.0, 1.0)


def pad_to_multiple(x: Tensor, multiple: int) -> tuple[Tensor, tuple[int, int]]:
    """Reflect-pad bottom/right to the next multiple of ``multiple``.

    Returns the padded batch and the original (H, W) for exact cropping.
    """
    if multiple < 1:
        raise ValueError(f"multiple must be >= 1, got {multiple}")
    h, w = x.shape[-2], x.shape[-1]
    if h < 1 or w < 1:
        raise ValueError(f"image must be at least 1x1, got {h}x{w}")
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return x, (h, w)
    rows = reflect_indices(h, 0, pad_h, device=x.device)
    cols = reflect_indices(w, 0, pad_w, device=x.device)
    return x[..., rows[:, None], cols], (h, w)


def crop_to(x: Tensor, crop: tuple[int, int]) -> Tensor:
    h, w = crop
    return x[..., :h, :w]


def init_parameters(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Named parameter and buffer arrays for a freshly seeded model."""
    return CSPCN(cfg, seed=seed).state_dict()
