"""Composite training objective.

Per stage output: a smoothed-L1 (Charbonnier) term plus a weighted edge term
computed on Laplacian-filtered images.  The decoder reconstructions of the
first two stages add one weighted L1 term.  Norms are realized as
per-element means so the loss scale is resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from typing import TYPE_CHECKING

from .config import LossConfig

if TYPE_CHECKING:
    from .model import ForwardResult


@dataclass
class LossReport:
    """Per-term values of one composite-loss evaluation (plain floats)."""

    charbonnier_per_stage: list[float]
    edge_per_stage: list[float]
    recon: float
    total: float


def _check_same_shape(pred: Tensor, gt: Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def charbonnier(pred: Tensor, gt: Tensor, eps: float = 1e-3) -> Tensor:
    """Mean of sqrt(diff^2 + eps^2); smooth at zero, floor value eps."""
    _check_same_shape(pred, gt)
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    diff = pred - gt
    return torch.sqrt(diff * diff + eps * eps).mean()


def laplacian(x: Tensor, neighbors: int = 4) -> Tensor:
    """Discrete Laplacian with replicate borders.

    Computed by balanced shifted adds so constant inputs map to exactly
    zero; equals per-channel convolution with the 4-neighbor kernel
    [[0,1,0],[1,-4,1],[0,1,0]] (or its 8-neighbor variant).
    """
    p = torch.nn.functional.pad(x, (1, 1, 1, 1), mode="replicate")
    up = p[..., :-2, 1:-1]
    down = p[..., 2:, 1:-1]
    left = p[..., 1:-1, :-2]
    right = p[..., 1:-1, 2:]
    cross = (up + down) + (left + right)
    if neighbors == 4:
        return cross - 4 * x
    if neighbors == 8:
        ul = p[..., :-2, :-2]
        ur = p[..., :-2, 2:]
        dl = p[..., 2:, :-2]
        dr = p[..., 2:, 2:]
        return cross + ((ul + ur) + (dl + dr)) - 8 * x
    raise ValueError(f"neighbors must be 4 or 8, got {neighbors}")


def edge_loss(pred: Tensor, gt: Tensor, eps: float = 1e-3, neighbors: int = 4) -> Tensor:
    """Charbonnier distance between Laplacian-filtered prediction and truth."""
    _check_same_shape(pred, gt)
    return charbonnier(laplacian(pred, neighbors), laplacian(gt, neighbors), eps)


def recon_l1(decoded: list[Tensor], gt: Tensor) -> Tensor:
    """Summed mean absolute error of the decoded outputs against truth.

    Only the first two stages expose a decoded image, so the list may
    hold one or two entries.
    """
    if not 1 <= len(decoded) <= 2:
        raise ValueError(f"recon_l1 expects 1 or 2 decoded outputs, got {len(decoded)}")
    total = None
    for image in decoded:
        _check_same_shape(image, gt)
        term = (image - gt).abs().mean()
        total = term if total is None else total + term
    return total


def composite_loss(result: "ForwardResult", gt: Tensor, cfg: LossConfig) -> tuple[Tensor, LossReport]:
    """Differentiable total plus a detached per-term report.

    Every stage contributes its Charbonnier and weighted edge terms; the
    decoder reconstruction term is counted once.
    """
    if not result.stage_outputs:
        raise ValueError("composite_loss: no stage outputs")
    chars = [charbonnier(y, gt, cfg.epsilon) for y in result.stage_outputs]
    edges = [edge_loss(y, gt, cfg.epsilon, cfg.laplacian_neighbors) for y in result.stage_outputs]
    total = chars[0] + cfg.lambda1 * edges[0]
    for c, e in zip(chars[1:], edges[1:]):
        total = total + c + cfg.lambda1 * e
    if result.decoded_outputs:
        recon = recon_l1(result.decoded_outputs, gt)
        total = total + cfg.lambda2 * recon
        recon_value = recon.detach().item()
    else:
        recon_value = 0.0
    report = LossReport(
        charbonnier_per_stage=[c.detach().item() for c in chars],
        edge_per_stage=[e.detach().item() for e in edges],
        recon=recon_value,
        total=total.detach().item(),
    )
    return total, report


def total_loss(result: "ForwardResult", gt: Tensor, cfg: LossConfig) -> LossReport:
    return composite_loss(result, gt, cfg)[1]
