"""Training loop: schedule, batch synthesis, stepping, checkpoints, logs.

Every batch is a pure function of (seed, step), so interrupting a run and
resuming from a checkpoint replays exactly the batches a straight-through
run would have seen.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from .config import LossConfig, TrainConfig, dump_config
from .data import (DatasetIndex, add_awgn, derive_seed, from_tensor, load_image,
                   split_index, to_tensor)
from .losses import LossReport, composite_loss
from .metrics import psnr, ssim
from .model import CSPCN
from .persistence import Checkpoint, load_checkpoint, save_checkpoint

TRAIN_CSV_HEADER = "step,lr,char,edge,recon,total"
VAL_CSV_HEADER = "step,psnr_db,ssim"

_VAL_STREAM = 0x76616C  # constant stream tag for validation noise
_TORCH_STREAM = 0x746F7263  # stream tag for the global torch generator


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate for a zero-based optimization step.

    "step_halving" starts at the initial rate and halves it after every
    `step_interval` steps.  "cosine" anneals from the initial rate down
    to `lr_floor` over the full run.
    """
    if not 0 <= step < cfg.iterations:
        raise ValueError(f"step {step} outside [0, {cfg.iterations})")
    lr0 = cfg.initial_lr()
    if cfg.schedule == "step_halving":
        return lr0 * 0.5 ** (step // cfg.step_interval)
    if cfg.schedule == "cosine":
        t = step / cfg.iterations
        return cfg.lr_floor + 0.5 * (lr0 - cfg.lr_floor) * (1.0 + math.cos(math.pi * t))
    raise ValueError(f"unknown schedule {cfg.schedule!r}")


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.initial_lr(),
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=1e-8)


# ---------------------------------------------------------------------------
# batch synthesis

def load_training_images(index: DatasetIndex, channels: int,
                         min_size: int | None = None) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Load every indexed image into memory as (clean, noisy-or-None).

    Raises if an image is smaller than `min_size` in either dimension.
    """
    grayscale = channels == 1
    out = []
    for i, clean_path in enumerate(index.clean_paths):
        clean = load_image(clean_path, grayscale=grayscale)
        if min_size is not None and min(clean.shape[:2]) < min_size:
            raise ValueError(
                f"{clean_path}: image {clean.shape[0]}x{clean.shape[1]} is smaller "
                f"than the {min_size}px patch")
        noisy = None
        if index.noisy_paths is not None:
            noisy = load_image(index.noisy_paths[i], grayscale=grayscale)
            if noisy.shape != clean.shape:
                raise ValueError(
                    f"{index.noisy_paths[i]}: shape {noisy.shape} does not match "
                    f"its clean partner {clean.shape}")
        out.append((clean, noisy))
    return out


def make_batch(images: list[tuple[np.ndarray, np.ndarray | None]],
               cfg: TrainConfig, step: int) -> tuple[Tensor, Tensor]:
    """Assemble the (noisy, clean) tensors for one step.

    Image choice, patch position, flips, noise level, and noise draw all
    come from a generator seeded by (cfg.seed, step) only.
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, step))
    p = cfg.patch_size
    noisy_patches = np.empty((cfg.batch_size, p, p, images[0][0].shape[2]), np.float32)
    clean_patches = np.empty_like(noisy_patches)
    picks = rng.integers(0, len(images), size=cfg.batch_size)
    for j, i in enumerate(picks):
        clean_img, noisy_img = images[i]
        h, w = clean_img.shape[:2]
        top = int(rng.integers(0, h - p + 1))
        left = int(rng.integers(0, w - p + 1))
        clean = clean_img[top:top + p, left:left + p]
        if noisy_img is not None:
            noisy = noisy_img[top:top + p, left:left + p]
        else:
            sigma = cfg.sigma
            if cfg.sigma_max is not None:
                sigma = float(rng.uniform(cfg.sigma, cfg.sigma_max))
            noisy = add_awgn(clean, sigma, int(rng.integers(0, 1 << 62)))
        if rng.random() < 0.5:
            clean, noisy = clean[:, ::-1], noisy[:, ::-1]
        if rng.random() < 0.5:
            clean, noisy = clean[::-1], noisy[::-1]
        clean_patches[j] = clean
        noisy_patches[j] = noisy
    return to_tensor(noisy_patches), to_tensor(clean_patches)


# ---------------------------------------------------------------------------
# stepping

def _check_finite(report: LossReport) -> None:
    terms = []
    for s, v in enumerate(report.charbonnier_per_stage, start=1):
        terms.append((f"stage{s}_char", v))
    for s, v in enumerate(report.edge_per_stage, start=1):
        terms.append((f"stage{s}_edge", v))
    terms.append(("recon", report.recon))
    terms.append(("total", report.total))
    for name, value in terms:
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite training loss: {name} = {value}")


def train_step(model: CSPCN, optimizer: torch.optim.Optimizer, noisy: Tensor,
               clean: Tensor, loss_cfg: LossConfig,
               grad_clip: float = 0.0) -> LossReport:
    """One optimization step; raises naming the first non-finite term."""
    model.train()
    total, report = composite_loss(model(noisy), clean, loss_cfg)
    _check_finite(report)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if grad_clip > 0.0:
        nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return report


# ---------------------------------------------------------------------------
# logs

@dataclass
class TrainLog:
    """Per-step loss history plus validation scores, as delimited text."""

    rows: list[tuple[int, float, float, float, float, float]] = field(default_factory=list)
    val_rows: list[tuple[int, float, float]] = field(default_factory=list)
    best_step: int | None = None
    best_psnr: float | None = None

    def append(self, step: int, lr: float, report: LossReport) -> None:
        self.rows.append((step, lr, sum(report.charbonnier_per_stage),
                          sum(report.edge_per_stage), report.recon, report.total))

    def write_csv(self, path: str | Path) -> None:
        lines = [TRAIN_CSV_HEADER]
        lines.extend(f"{s},{lr:.8g},{c:.8g},{e:.8g},{r:.8g},{t:.8g}"
                     for s, lr, c, e, r, t in self.rows)
        _atomic_write_text(Path(path), "\n".join(lines) + "\n")

    def write_val_csv(self, path: str | Path) -> None:
        lines = [VAL_CSV_HEADER]
        lines.extend(f"{s},{p:.4f},{m:.6f}" for s, p, m in self.val_rows)
        _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".part{os.getpid()}")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# checkpoint glue

def _training_arrays(model: CSPCN,
                     optimizer: torch.optim.Optimizer | None) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        arrays[name] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        for name, param in model.named_parameters():
            state = optimizer.state.get(param)
            if not state:
                continue
            arrays[f"opt.exp_avg.{name}"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"opt.exp_avg_sq.{name}"] = state["exp_avg_sq"].detach().cpu().numpy()
    return arrays


def save_training_checkpoint(path: str | Path, model: CSPCN,
                             optimizer: torch.optim.Optimizer | None, step: int,
                             loss_cfg: LossConfig, train_cfg: TrainConfig) -> None:
    snapshot = dump_config(model.cfg, loss_cfg, train_cfg)
    rng_state = torch.get_rng_state().numpy().tobytes()
    save_checkpoint(path, step, snapshot, _training_arrays(model, optimizer), rng_state)


def apply_model_arrays(model: CSPCN, ckpt: Checkpoint) -> None:
    """Load checkpoint arrays into the model, strictly.

    Raises ValueError naming the first missing, unexpected, or
    mis-shaped entry.
    """
    target = model.state_dict()
    tensors = {}
    for name, ref in target.items():
        if name not in ckpt.arrays:
            raise ValueError(f"checkpoint is missing entry {name!r}")
        arr = ckpt.arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(
                f"checkpoint entry {name!r} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(ref.shape)}")
        tensors[name] = torch.from_numpy(arr.copy()).to(ref.dtype)
    unexpected = sorted(n for n in ckpt.arrays
                        if n not in target and not n.startswith("opt."))
    if unexpected:
        raise ValueError(f"checkpoint has unexpected entry {unexpected[0]!r}")
    model.load_state_dict(tensors)


def apply_optimizer_arrays(model: CSPCN, optimizer: torch.optim.Optimizer,
                           ckpt: Checkpoint) -> None:
    """Rebuild Adam's moment state from checkpoint arrays.

    The per-parameter step counter is reconstructed from the
    checkpoint's global step, which is valid because every parameter is
    updated on every step.  A checkpoint with no optimizer entries
    leaves the optimizer fresh.
    """
    names = [n for n, _ in model.named_parameters()]
    present = [n for n in names if f"opt.exp_avg.{n}" in ckpt.arrays]
    if not present:
        return
    missing = [n for n in names if n not in present]
    if missing:
        raise ValueError(f"checkpoint is missing optimizer moments for {missing[0]!r}")
    for name, param in model.named_parameters():
        exp_avg = ckpt.arrays[f"opt.exp_avg.{name}"]
        exp_avg_sq = ckpt.arrays[f"opt.exp_avg_sq.{name}"]
        for tag, arr in (("exp_avg", exp_avg), ("exp_avg_sq", exp_avg_sq)):
            if tuple(arr.shape) != tuple(param.shape):
                raise ValueError(
                    f"checkpoint entry 'opt.{tag}.{name}' has shape "
                    f"{tuple(arr.shape)}, parameter expects {tuple(param.shape)}")
        optimizer.state[param] = {
            "step": torch.tensor(float(ckpt.step)),
            "exp_avg": torch.from_numpy(exp_avg.copy()).to(param.dtype),
            "exp_avg_sq": torch.from_numpy(exp_avg_sq.copy()).to(param.dtype),
        }


def restore_rng(ckpt: Checkpoint) -> None:
    if ckpt.rng_state is not None:
        torch.set_rng_state(torch.frombuffer(bytearray(ckpt.rng_state), dtype=torch.uint8))


# ---------------------------------------------------------------------------
# validation and the main loop

def validate(model: CSPCN, images: list[tuple[np.ndarray, np.ndarray | None]],
             cfg: TrainConfig) -> tuple[float, float]:
    """Mean full-image PSNR/SSIM over held-out images.

    Synthetic noise for validation is fixed per image index, so scores
    at different steps are comparable.
    """
    psnrs, ssims = [], []
    for i, (clean, noisy) in enumerate(images):
        if noisy is None:
            noisy = add_awgn(clean, cfg.sigma, derive_seed(cfg.seed, _VAL_STREAM, i))
        restored = from_tensor(model.denoise(to_tensor(noisy)[None]))
        psnrs.append(psnr(clean, restored))
        ssims.append(ssim(clean, restored))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def _reload_logs(out_dir: Path, start_step: int, log: TrainLog) -> None:
    """Carry log rows written before `start_step` across a resume."""
    train_csv = out_dir / "train_log.csv"
    if train_csv.is_file():
        for line in train_csv.read_text(encoding="utf-8").splitlines()[1:]:
            parts = line.split(",")
            if int(parts[0]) < start_step:
                log.rows.append((int(parts[0]), *(float(v) for v in parts[1:])))
    val_csv = out_dir / "val_log.csv"
    if val_csv.is_file():
        for line in val_csv.read_text(encoding="utf-8").splitlines()[1:]:
            parts = line.split(",")
            if int(parts[0]) <= start_step:
                log.val_rows.append((int(parts[0]), float(parts[1]), float(parts[2])))
    for step, psnr_db, _ in log.val_rows:
        # so a resumed run never demotes the best checkpoint already on disk
        if log.best_psnr is None or psnr_db > log.best_psnr:
            log.best_psnr, log.best_step = psnr_db, step


def fit(model: CSPCN, index: DatasetIndex, loss_cfg: LossConfig,
        train_cfg: TrainConfig, out_dir: str | Path,
        resume_from: str | Path | None = None,
        progress=None) -> TrainLog:
    """Run the optimization loop to `train_cfg.iterations` steps.

    Writes periodic checkpoints, a final checkpoint, a best-validation
    checkpoint, and the loss/validation logs into `out_dir`.  `progress`
    is an optional callable (step, lr, report) invoked after each step.
    `resume_from` restarts from a saved checkpoint and replays the exact
    remaining batch sequence.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # pin the global generator so the rng state a checkpoint carries is a
    # pure function of (seed, steps taken), not of process start-up
    torch.manual_seed(derive_seed(train_cfg.seed, _TORCH_STREAM))
    optimizer = make_optimizer(model, train_cfg)
    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        apply_model_arrays(model, ckpt)
        apply_optimizer_arrays(model, optimizer, ckpt)
        restore_rng(ckpt)
        start_step = ckpt.step
    train_index, val_index = split_index(index, train_cfg.val_fraction)
    images = load_training_images(train_index, model.cfg.image_channels,
                                  min_size=train_cfg.patch_size)
    val_images = (load_training_images(val_index, model.cfg.image_channels)
                  if val_index is not None else None)

    log = TrainLog()
    if start_step > 0:
        _reload_logs(out_dir, start_step, log)
    for step in range(start_step, train_cfg.iterations):
        lr = lr_at(step, train_cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        noisy, clean = make_batch(images, train_cfg, step)
        report = train_step(model, optimizer, noisy, clean, loss_cfg,
                            train_cfg.grad_clip)
        log.append(step, lr, report)
        if progress is not None:
            progress(step, lr, report)
        done = step + 1
        at_checkpoint = (done % train_cfg.checkpoint_interval == 0
                         or done == train_cfg.iterations)
        if not at_checkpoint:
            continue
        save_training_checkpoint(out_dir / f"step_{done:08d}.cspcn", model,
                                 optimizer, done, loss_cfg, train_cfg)
        log.write_csv(out_dir / "train_log.csv")
        if val_images is not None:
            val_psnr, val_ssim = validate(model, val_images, train_cfg)
            log.val_rows.append((done, val_psnr, val_ssim))
            log.write_val_csv(out_dir / "val_log.csv")
            if log.best_psnr is None or val_psnr > log.best_psnr:
                log.best_psnr, log.best_step = val_psnr, done
                save_training_checkpoint(out_dir / "best.cspcn", model,
                                         optimizer, done, loss_cfg, train_cfg)
    save_training_checkpoint(out_dir / "final.cspcn", model, optimizer,
                             train_cfg.iterations, loss_cfg, train_cfg)
    log.write_csv(out_dir / "train_log.csv")
    return log
