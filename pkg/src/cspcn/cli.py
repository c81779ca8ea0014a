"""Command-line front end.

Exit codes: 0 on success, 1 for bad invocations (unknown flags, missing
or contradictory arguments), 2 for runtime failures (unreadable files,
bad configs, non-finite losses).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import (ConfigError, LossConfig, ModelConfig, TrainConfig,
                     load_config, parse_config, save_config, validate_configs)
from .data import (IMAGE_EXTENSIONS, add_awgn, derive_seed, from_tensor,
                   image_bit_depth, index_dataset, load_image, save_image,
                   to_tensor)
from .metrics import MetricReport, compare, write_metrics_csv
from .model import CSPCN
from .persistence import load_checkpoint
from .training import apply_model_arrays, fit
from .selftest import run_selftest


class UsageError(Exception):
    """Bad flag combination discovered after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _env_seed() -> int | None:
    raw = os.environ.get("CSPCN_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CSPCN_SEED must be an integer, got {raw!r}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="cspcn",
                     description="Three-stage progressive image denoiser.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a model on a dataset directory")
    p_train.add_argument("--config", required=True, help="flat key = value config file")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--sigma", type=float, help="training noise level (on 0..255)")
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--patch-size", type=int)
    p_train.add_argument("--schedule", choices=("step_halving", "cosine"))
    p_train.add_argument("--lr", type=float, help="initial learning rate")
    p_train.add_argument("--sigma-max", type=float,
                         help="upper noise level for blind training")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--checkpoint-interval", type=int)
    p_train.add_argument("--val-fraction", type=float)
    p_train.add_argument("--grad-clip", type=float,
                         help="gradient norm ceiling, 0 disables clipping")
    p_train.add_argument("--print-interval", type=int, default=100)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score trained weights on a dataset")
    p_eval.add_argument("--weights", required=True, help="checkpoint file")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    noise = p_eval.add_mutually_exclusive_group(required=True)
    noise.add_argument("--sigma", type=float,
                       help="noise level to synthesize on clean images")
    noise.add_argument("--paired", action="store_true",
                       help="read noisy inputs from a clean/ + noisy/ layout")
    p_eval.add_argument("--seed", type=int, default=0, help="noise seed")
    p_eval.add_argument("--out", default=".", help="report directory")
    p_eval.add_argument("--save-images", action="store_true",
                        help="also write the restored images")
    p_eval.add_argument("--quantize", action="store_true",
                        help="snap to the 8-bit grid before scoring")
    p_eval.add_argument("--luma", action="store_true",
                        help="score BT.601 luminance only")
    p_eval.set_defaults(func=cmd_eval)

    p_den = sub.add_parser("denoise", help="restore images with trained weights")
    p_den.add_argument("--weights", required=True, help="checkpoint file")
    p_den.add_argument("--input", required=True, help="image file or directory")
    p_den.add_argument("--output", required=True, help="output directory")
    p_den.set_defaults(func=cmd_denoise)

    p_syn = sub.add_parser("synth-noise",
                           help="write noisy copies of clean images")
    p_syn.add_argument("--input", required=True, help="clean image directory")
    p_syn.add_argument("--output", required=True, help="noisy image destination")
    p_syn.add_argument("--sigma", type=float, required=True)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.set_defaults(func=cmd_synth)

    p_self = sub.add_parser("selftest", help="run the built-in diagnostic suite")
    p_self.set_defaults(func=cmd_selftest)
    return parser


# ---------------------------------------------------------------------------
# commands

def _load_cli_configs(args) -> tuple[ModelConfig, LossConfig, TrainConfig]:
    model_cfg, loss_cfg, train_cfg = load_config(args.config)
    overrides = {"iterations": args.iterations, "batch_size": args.batch_size,
                 "patch_size": args.patch_size, "schedule": args.schedule,
                 "lr_init": args.lr, "sigma": args.sigma, "sigma_max": args.sigma_max,
                 "seed": args.seed, "checkpoint_interval": args.checkpoint_interval,
                 "val_fraction": args.val_fraction, "grad_clip": args.grad_clip}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    env_seed = _env_seed()
    if env_seed is not None:
        overrides["seed"] = env_seed
    train_cfg = dataclasses.replace(train_cfg, **overrides)
    validate_configs(model_cfg, loss_cfg, train_cfg)
    return model_cfg, loss_cfg, train_cfg


def cmd_train(args) -> int:
    model_cfg, loss_cfg, train_cfg = _load_cli_configs(args)
    if args.resume is not None and not Path(args.resume).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.resume}")
    index = index_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(model_cfg, loss_cfg, train_cfg, out_dir / "config.txt")
    model = CSPCN(model_cfg, seed=train_cfg.seed)

    interval = max(1, args.print_interval)

    def progress(step, lr, report):
        if (step + 1) % interval == 0 or step + 1 == train_cfg.iterations:
            print(f"step {step + 1}/{train_cfg.iterations}  lr {lr:.3g}  "
                  f"total {report.total:.5f}")

    log = fit(model, index, loss_cfg, train_cfg, out_dir,
              resume_from=args.resume, progress=progress)
    from .reports import render_training_curves
    if log.rows:
        render_training_curves(log, out_dir / "training_curves.png")
    if log.best_step is not None:
        print(f"best validation PSNR {log.best_psnr:.3f} dB at step {log.best_step}")
    print(f"final checkpoint: {out_dir / 'final.cspcn'}")
    return 0


def _load_model(weights_path: str) -> CSPCN:
    ckpt = load_checkpoint(weights_path)
    model_cfg, loss_cfg, train_cfg = parse_config(ckpt.config_snapshot)
    validate_configs(model_cfg, loss_cfg, train_cfg)
    model = CSPCN(model_cfg)
    apply_model_arrays(model, ckpt)
    model.eval()
    return model


def cmd_eval(args) -> int:
    model = _load_model(args.weights)
    index = index_dataset(args.data, mode="paired" if args.paired else "synthetic")
    seed = _env_seed()
    if seed is None:
        seed = args.seed
    grayscale = model.cfg.image_channels == 1
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.save_images:
        (out_dir / "restored").mkdir(exist_ok=True)
    reports = []
    for i, clean_path in enumerate(index.clean_paths):
        clean = load_image(clean_path, grayscale=grayscale)
        if index.noisy_paths is not None:
            noisy = load_image(index.noisy_paths[i], grayscale=grayscale)
            if noisy.shape != clean.shape:
                raise ValueError(f"{clean_path.name}: clean and noisy sizes differ, "
                                 f"{clean.shape} vs {noisy.shape}")
        else:
            noisy = add_awgn(clean, args.sigma, derive_seed(seed, i))
        restored = from_tensor(model.denoise(to_tensor(noisy)[None]))
        psnr_db, ssim_value = compare(clean, restored, quantize=args.quantize,
                                      luma=args.luma)
        reports.append(MetricReport(clean_path.stem, psnr_db, ssim_value))
        print(f"{clean_path.name}: {psnr_db:.4f} dB, ssim {ssim_value:.6f}")
        if args.save_images:
            save_image(out_dir / "restored" / clean_path.name, restored)
    write_metrics_csv(out_dir / "metrics.csv", reports)
    from .reports import render_metric_chart
    mean_psnr = sum(r.psnr_db for r in reports) / len(reports)
    mean_ssim = sum(r.ssim for r in reports) / len(reports)
    render_metric_chart(reports + [MetricReport("MEAN", mean_psnr, mean_ssim)],
                        out_dir / "metric_chart.png")
    print(f"MEAN: {mean_psnr:.4f} dB, ssim {mean_ssim:.6f}")
    print(f"report: {out_dir / 'metrics.csv'}")
    return 0


def cmd_denoise(args) -> int:
    model = _load_model(args.weights)
    grayscale = model.cfg.image_channels == 1
    src = Path(args.input)
    if src.is_dir():
        paths = [p for p in sorted(src.iterdir())
                 if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS]
        if not paths:
            raise ValueError(f"no image files in {src}")
    elif src.is_file():
        paths = [src]
    else:
        raise FileNotFoundError(f"input not found: {src}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        depth = image_bit_depth(path)
        img = load_image(path, grayscale=grayscale)
        restored = from_tensor(model.denoise(to_tensor(img)[None]))
        dest = out_dir / path.name
        save_image(dest, restored, bit_depth=depth)
        print(dest)
    return 0


def cmd_synth(args) -> int:
    index = index_dataset(args.input, mode="synthetic")
    seed = _env_seed()
    if seed is None:
        seed = args.seed
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(index.clean_paths):
        clean = load_image(path)
        noisy = add_awgn(clean, args.sigma, derive_seed(seed, i))
        save_image(out_dir / (path.stem + ".png"), noisy)
    print(f"wrote {len(index.clean_paths)} noisy images under {out_dir}")
    return 0


def cmd_selftest(args) -> int:
    ok = run_selftest()
    if not ok:
        print("selftest failed", file=sys.stderr)
        return 2
    print("all checks passed")
    return 0


def entry(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
