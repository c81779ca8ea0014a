"""Dataset indexing, image I/O, noise synthesis, and patch extraction.

Images travel through the pipeline as float32 arrays in [0, 1], channel
last.  Noise and patch positions are derived from integer seeds so that
any batch can be reproduced from (seed, step) alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from torch import Tensor

IMAGE_EXTENSIONS = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")

_MASK64 = (1 << 64) - 1
_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _mix64(z: int) -> int:
    # splitmix64 finalizer
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(seed: int, *streams: int) -> int:
    """Mix a base seed with stream indices into an independent sub-seed.

    Pure and stateless: the same arguments always give the same result,
    and distinct stream tuples give unrelated values.
    """
    state = _mix64(seed & _MASK64)
    for s in streams:
        state = _mix64(state ^ (s & _MASK64))
    return state >> 1  # keep it in the non-negative int64 range


def add_awgn(clean: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise with standard deviation sigma/255.

    The result keeps the input's value scale but is not clipped; samples
    below 0 or above 1 are left as-is for the network to see.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape, dtype=np.float32) * np.float32(sigma / 255.0)
    return clean.astype(np.float32, copy=False) + noise


def patch_coords(height: int, width: int, patch_size: int, count: int, seed: int,
                 mode: str = "random") -> list[tuple[int, int]]:
    """Top-left corners of patches inside a (height, width) image.

    "random" draws `count` positions from a generator derived from
    (seed, height, width); "grid" tiles the image with non-overlapping
    patches and ignores `count` and `seed`.
    """
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    if patch_size > height or patch_size > width:
        raise ValueError(
            f"patch_size {patch_size} exceeds image extent {height}x{width}")
    if mode == "grid":
        return [(t, l)
                for t in range(0, height - patch_size + 1, patch_size)
                for l in range(0, width - patch_size + 1, patch_size)]
    if mode != "random":
        raise ValueError(f"unknown patch mode {mode!r}")
    rng = np.random.default_rng(derive_seed(seed, height, width))
    tops = rng.integers(0, height - patch_size + 1, size=count)
    lefts = rng.integers(0, width - patch_size + 1, size=count)
    return [(int(t), int(l)) for t, l in zip(tops, lefts)]


def extract_patches(image: np.ndarray, coords: list[tuple[int, int]],
                    patch_size: int) -> np.ndarray:
    """Stack the crops named by `coords` into (N, patch, patch, C)."""
    out = np.empty((len(coords), patch_size, patch_size, image.shape[2]),
                   dtype=image.dtype)
    for i, (t, l) in enumerate(coords):
        out[i] = image[t:t + patch_size, l:l + patch_size]
    return out


def augment_pair(clean: np.ndarray, noisy: np.ndarray,
                 seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same random horizontal/vertical flips to both images.

    Each flip fires independently with probability one half.
    """
    if clean.shape != noisy.shape:
        raise ValueError(
            f"clean and noisy shapes differ: {clean.shape} vs {noisy.shape}")
    rng = np.random.default_rng(seed)
    if rng.random() < 0.5:
        clean, noisy = clean[:, ::-1], noisy[:, ::-1]
    if rng.random() < 0.5:
        clean, noisy = clean[::-1], noisy[::-1]
    return np.ascontiguousarray(clean), np.ascontiguousarray(noisy)


def rgb_to_luma(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (H, W, 3) image, returned as (H, W, 1)."""
    r, g, b = _LUMA_WEIGHTS
    luma = r * img[..., 0] + g * img[..., 1] + b * img[..., 2]
    return luma[..., None].astype(img.dtype, copy=False)


def load_image(path: str | Path, grayscale: bool = False) -> np.ndarray:
    """Read an image file as float32 in [0, 1], channel last.

    8-bit data is scaled by 1/255, 16-bit by 1/65535.  Returns (H, W, 3)
    RGB, or (H, W, 1) when grayscale is requested (BT.601 conversion if
    the file is color).  Alpha channels are dropped.
    """
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"could not read image: {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float32) / np.float32(255.0)
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float32) / np.float32(65535.0)
    else:
        raise ValueError(f"unsupported image dtype {raw.dtype} in {path}")
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 4:
        img = img[:, :, :3]
    if img.shape[2] == 3:
        img = img[:, :, ::-1]  # files store BGR
    if grayscale:
        if img.shape[2] == 3:
            img = rgb_to_luma(img)
    elif img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img)


def image_bit_depth(path: str | Path) -> int:
    """Stored sample depth of an image file: 8 or 16."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"could not read image: {path}")
    if raw.dtype == np.uint8:
        return 8
    if raw.dtype == np.uint16:
        return 16
    raise ValueError(f"unsupported image dtype {raw.dtype} in {path}")


def save_image(path: str | Path, img: np.ndarray, bit_depth: int = 8) -> None:
    """Write a float image in [0, 1] to disk, clipping and quantizing.

    The encoded bytes land under a temporary name first and are renamed
    into place, so a crash never leaves a partial file.
    """
    path = Path(path)
    if bit_depth == 8:
        scale, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        scale, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    if img.ndim == 2:
        img = img[:, :, None]
    quant = np.rint(np.clip(img.astype(np.float64), 0.0, 1.0) * scale).astype(dtype)
    if quant.shape[2] == 3:
        quant = quant[:, :, ::-1]  # back to BGR for encoding
    elif quant.shape[2] == 1:
        quant = quant[:, :, 0]
    ok, buf = cv2.imencode(path.suffix, quant)
    if not ok:
        raise ValueError(f"could not encode image for {path}")
    tmp = path.with_name(path.name + f".part{os.getpid()}")
    try:
        tmp.write_bytes(buf.tobytes())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def to_tensor(img: np.ndarray) -> Tensor:
    """(H, W, C) or (N, H, W, C) float array to a channel-first tensor."""
    t = torch.from_numpy(np.ascontiguousarray(img)).float()
    if t.ndim == 3:
        return t.permute(2, 0, 1)
    if t.ndim == 4:
        return t.permute(0, 3, 1, 2)
    raise ValueError(f"expected 3 or 4 dims, got {t.ndim}")


def from_tensor(t: Tensor) -> np.ndarray:
    """Channel-first tensor back to a channel-last float32 array."""
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    return t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float32, copy=False)


@dataclass(frozen=True)
class DatasetIndex:
    """Sorted view of a dataset directory.

    kind is "synthetic" (clean images only, noise made on the fly) or
    "paired" (clean/ and noisy/ subdirectories matched by file name).
    """

    kind: str
    clean_paths: tuple[Path, ...]
    noisy_paths: tuple[Path, ...] | None = None

    def __len__(self) -> int:
        return len(self.clean_paths)


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)


def index_dataset(root: str | Path, mode: str | None = None) -> DatasetIndex:
    """Scan a dataset directory.

    A directory holding clean/ and noisy/ subdirectories is indexed as a
    paired set; file names in the two must match one-to-one.  Any other
    directory is indexed as a synthetic set of its image files.  Passing
    mode "paired" or "synthetic" demands that layout instead of guessing.
    """
    if mode not in (None, "paired", "synthetic"):
        raise ValueError(f"mode must be 'paired' or 'synthetic', got {mode!r}")
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    clean_dir, noisy_dir = root / "clean", root / "noisy"
    has_pair_dirs = clean_dir.is_dir() and noisy_dir.is_dir()
    if mode == "paired" and not has_pair_dirs:
        raise ValueError(f"paired dataset needs clean/ and noisy/ under {root}")
    if mode == "synthetic":
        files = _image_files(root)
        if not files:
            if has_pair_dirs:
                raise ValueError(
                    f"{root} holds a paired clean/noisy layout, not loose images")
            raise ValueError(f"no image files in {root}")
        return DatasetIndex("synthetic", tuple(files))
    if has_pair_dirs:
        clean = _image_files(clean_dir)
        noisy = {p.name: p for p in _image_files(noisy_dir)}
        if not clean:
            raise ValueError(f"no image files in {clean_dir}")
        missing = [p.name for p in clean if p.name not in noisy]
        if missing:
            raise ValueError(f"no noisy partner for {missing[0]} in {noisy_dir}")
        extra = sorted(set(noisy) - {p.name for p in clean})
        if extra:
            raise ValueError(f"no clean partner for {extra[0]} in {clean_dir}")
        return DatasetIndex("paired", tuple(clean),
                            tuple(noisy[p.name] for p in clean))
    files = _image_files(root)
    if not files:
        raise ValueError(f"no image files in {root}")
    return DatasetIndex("synthetic", tuple(files))


def split_index(index: DatasetIndex,
                val_fraction: float) -> tuple[DatasetIndex, DatasetIndex | None]:
    """Hold out the tail of the index for validation.

    A fraction of zero disables the split and trains on everything.  A
    positive fraction holds out at least one image but never all of them.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if val_fraction == 0.0 or len(index) < 2:
        return index, None
    n_val = min(max(1, int(len(index) * val_fraction)), len(index) - 1)
    n_train = len(index) - n_val
    train = DatasetIndex(index.kind, index.clean_paths[:n_train],
                         index.noisy_paths[:n_train] if index.noisy_paths else None)
    val = DatasetIndex(index.kind, index.clean_paths[n_train:],
                       index.noisy_paths[n_train:] if index.noisy_paths else None)
    return train, val
