"""Built-in diagnostic suite, runnable from the command line.

Each check prints one PASS/FAIL line.  The gradient check compares
autodiff against central finite differences in float64; the others pin
down exact identities the implementation promises (fresh-model identity,
row-stochastic attention, zero curvature response on constants, seeded
batch determinism, checkpoint round trips).
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
import torch

from .config import LossConfig, ModelConfig, TrainConfig
from .data import add_awgn, derive_seed
from .losses import charbonnier, composite_loss, laplacian
from .metrics import psnr, ssim
from .model import CSPCN, pad_to_multiple, crop_to
from .persistence import load_checkpoint, save_checkpoint
from .training import lr_at, make_batch


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| scaled by the larger magnitude present (floored at 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)),
                float(np.max(np.abs(b), initial=0.0)), 1e-8)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def fd_gradients(loss_fn, param: torch.Tensor, indices: list[int],
                 h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of `loss_fn()` at selected flat indices.

    `loss_fn` must be a pure function of the current parameter values
    and return a float; the parameter is restored after probing.
    """
    flat = param.data.view(-1)
    out = np.empty(len(indices), dtype=np.float64)
    for k, i in enumerate(indices):
        orig = flat[i].item()
        flat[i] = orig + h
        f_plus = loss_fn()
        flat[i] = orig - h
        f_minus = loss_fn()
        flat[i] = orig
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out


def check_model_gradients(model: CSPCN, noisy: torch.Tensor, clean: torch.Tensor,
                          loss_cfg: LossConfig, samples_per_param: int = 2,
                          seed: int = 0) -> float:
    """Worst relative error between autodiff and finite differences.

    Probes `samples_per_param` random elements of every parameter.  The
    model must be in double precision.
    """
    model.train()

    def loss_value() -> float:
        with torch.no_grad():
            total, _ = composite_loss(model(noisy), clean, loss_cfg)
        return float(total.item())

    total, _ = composite_loss(model(noisy), clean, loss_cfg)
    model.zero_grad(set_to_none=True)
    total.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, param in model.named_parameters():
        if param.grad is None:
            raise RuntimeError("parameter received no gradient")
        n = param.numel()
        count = min(samples_per_param, n)
        indices = [int(i) for i in rng.choice(n, size=count, replace=False)]
        auto = param.grad.detach().view(-1)[indices].cpu().numpy()
        fd = fd_gradients(loss_value, param, indices)
        worst = max(worst, relative_error(auto, fd))
    return worst


# ---------------------------------------------------------------------------
# individual checks

def _tiny_configs() -> tuple[ModelConfig, LossConfig, TrainConfig]:
    model_cfg = ModelConfig(base_width=8, aed_scales=2, mlfp_dilations=(1, 2),
                            mcac_dilations=(1, 2), cascade_dabs=1, dab_reduction=4)
    return model_cfg, LossConfig(), TrainConfig(batch_size=2, patch_size=8, sigma=25.0)


def _check_identity() -> tuple[bool, str]:
    cfg, _, _ = _tiny_configs()
    model = CSPCN(cfg, seed=3)
    x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(4))
    with torch.no_grad():
        result = model.eval()(x)
    worst = max(float((y - x).abs().max()) for y in result.stage_outputs)
    return worst == 0.0, f"fresh-model residual {worst:g}"

def _check_padding() -> tuple[bool, str]:
    x = torch.arange(12.0).reshape(1, 1, 3, 4)
    padded, size = pad_to_multiple(x, 8)
    ok = padded.shape[-2:] == (8, 8) and torch.equal(crop_to(padded, size), x)
    one = torch.ones(1, 1, 1, 1)
    padded_one, _ = pad_to_multiple(one, 4)
    ok = ok and bool((padded_one == 1).all())
    return ok, "reflect pad round trip"

def _check_gradients() -> tuple[bool, str]:
    cfg, loss_cfg, _ = _tiny_configs()
    model = CSPCN(cfg, seed=11).double()
    g = torch.Generator().manual_seed(12)
    clean = torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64)
    noisy = clean + 0.1 * torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64)
    worst = check_model_gradients(model, noisy, clean, loss_cfg, samples_per_param=1)
    return worst < 1e-3, f"max rel err {worst:.2e}"

def _check_losses() -> tuple[bool, str]:
    x = torch.zeros(1, 1, 4, 4)
    y = torch.full((1, 1, 4, 4), 3e-3)
    got = float(charbonnier(x, y, 1e-3))
    want = math.sqrt(9e-6 + 1e-6)
    ok = abs(got - want) < 1e-9
    flat = laplacian(torch.full((1, 1, 6, 6), 0.7))
    ok = ok and float(flat.abs().max()) == 0.0
    return ok, f"charbonnier {got:.6g}, flat-field response {float(flat.abs().max()):g}"

def _check_schedule() -> tuple[bool, str]:
    cfg = TrainConfig(schedule="step_halving", iterations=400_000)
    ok = lr_at(0, cfg) == 1e-4 and lr_at(100_000, cfg) == 5e-5
    cos = TrainConfig(schedule="cosine", iterations=1000)
    ok = ok and abs(lr_at(0, cos) - 2e-4) < 1e-12
    ok = ok and abs(lr_at(500, cos) - (1e-6 + 0.5 * (2e-4 - 1e-6))) < 1e-12
    return ok, "halving and cosine endpoints"

def _check_metrics() -> tuple[bool, str]:
    a = np.zeros((16, 16, 1))
    b = np.full((16, 16, 1), 0.1)
    got = psnr(a, b)
    ok = abs(got - 20.0) < 1e-9
    rng = np.random.default_rng(5)
    img = rng.random((24, 24, 3)).astype(np.float32)
    ok = ok and ssim(img, img) == 1.0
    return ok, f"psnr {got:.4f} dB, self-ssim exact"

def _check_batches() -> tuple[bool, str]:
    _, _, train_cfg = _tiny_configs()
    rng = np.random.default_rng(8)
    images = [(rng.random((16, 16, 3)).astype(np.float32), None)]
    n1, c1 = make_batch(images, train_cfg, 7)
    n2, c2 = make_batch(images, train_cfg, 7)
    ok = torch.equal(n1, n2) and torch.equal(c1, c2)
    noise = add_awgn(np.zeros((8, 8, 1), np.float32), 25.0, derive_seed(1, 2))
    ok = ok and abs(float(noise.std()) - 25.0 / 255.0) < 0.02
    return ok, "seeded batches replay exactly"

def _check_persistence() -> tuple[bool, str]:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.cspcn"
        arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3),
                  "b": np.ones(4, dtype=np.float64)}
        save_checkpoint(path, 42, "k = 1", arrays, b"\x01\x02")
        ckpt = load_checkpoint(path)
        ok = (ckpt.step == 42 and ckpt.rng_state == b"\x01\x02"
              and ckpt.config_snapshot == "k = 1"
              and np.array_equal(ckpt.arrays["a"], arrays["a"])
              and np.array_equal(ckpt.arrays["b"], arrays["b"]))
        return ok, "round trip preserves arrays and metadata"

def _check_attention() -> tuple[bool, str]:
    from .mcac import attention_map
    g = torch.Generator().manual_seed(21)
    key = torch.randn(2, 6, 10, generator=g)
    query = torch.randn(2, 10, 6, generator=g)
    rows = attention_map(key, query).sum(dim=-1)
    worst = float((rows - 1.0).abs().max())
    return worst < 1e-6, f"row sums off by {worst:.2e}"


_CHECKS = [
    ("identity", _check_identity),
    ("padding", _check_padding),
    ("attention", _check_attention),
    ("losses", _check_losses),
    ("schedule", _check_schedule),
    ("metrics", _check_metrics),
    ("batches", _check_batches),
    ("persistence", _check_persistence),
    ("gradients", _check_gradients),
]


def run_selftest(verbose: bool = True) -> bool:
    """Run every check; returns True when all pass."""
    all_ok = True
    for name, check in _CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
    return all_ok
