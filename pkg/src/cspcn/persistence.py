"""Checkpoint container: a magic-tagged JSON manifest plus raw arrays.

Layout of a .cspcn file:

    bytes 0..5    magic b"CSPCN\\0"
    bytes 6..13   manifest length, unsigned 64-bit little endian
    manifest      UTF-8 JSON
    data section  the arrays named by the manifest, back to back

The manifest carries format_version, the training step, a config
snapshot, an optional base64 RNG state, and one entry per array with
name, shape, dtype tag ("f32" or "f64"), and byte offset relative to
the start of the data section.  Offsets are ascending and the arrays
never overlap.  Writes go to a temporary file renamed into place.
"""

from __future__ import annotations

import base64
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CSPCN\0"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


@dataclass
class Checkpoint:
    """In-memory view of a loaded checkpoint."""

    step: int
    config_snapshot: str
    arrays: dict[str, np.ndarray]
    rng_state: bytes | None = None
    format_version: int = FORMAT_VERSION


def _coerce_array(name: str, value) -> np.ndarray:
    arr = np.asarray(value)
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        arr = arr.astype(np.float64)  # integer payloads ride along as f64
    elif arr.dtype != np.float32 and arr.dtype != np.float64:
        raise ValueError(f"entry {name!r} has unsupported dtype {arr.dtype}")
    # note: ascontiguousarray would bump 0-d arrays to shape (1,)
    return arr if arr.flags["C_CONTIGUOUS"] else arr.copy(order="C")


def save_checkpoint(path: str | Path, step: int, config_snapshot: str,
                    arrays: dict[str, np.ndarray],
                    rng_state: bytes | None = None) -> None:
    """Serialize arrays and metadata to `path` atomically."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if not isinstance(config_snapshot, str):
        raise ValueError(
            f"config_snapshot must be text, got {type(config_snapshot).__name__}")
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in arrays:
        arr = _coerce_array(name, arrays[name])
        tag = _DTYPE_TAGS[arr.dtype]
        raw = arr.astype(_DTYPES[tag], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": tag, "byte_offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "config_snapshot": config_snapshot,
        "rng_state": base64.b64encode(rng_state).decode("ascii") if rng_state else None,
        "entries": entries,
    }
    header = json.dumps(manifest).encode("utf-8")
    tmp = path.with_name(path.name + f".part{os.getpid()}")
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for raw in blobs:
                f.write(raw)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read and validate a .cspcn file.

    Raises ValueError with the offending detail on a bad magic number,
    unsupported version, malformed manifest, out-of-order or overlapping
    entries, or a truncated data section.
    """
    path = Path(path)
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8:
        raise ValueError(f"{path}: file too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    data_start = len(MAGIC) + 8 + header_len
    if data_start > len(blob):
        raise ValueError(f"{path}: manifest extends past end of file")
    try:
        manifest = json.loads(blob[len(MAGIC) + 8:data_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: manifest is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")
    data = blob[data_start:]
    arrays: dict[str, np.ndarray] = {}
    prev_end = 0
    prev_name = None
    for entry in manifest.get("entries", []):
        name = entry.get("name")
        try:
            shape = tuple(int(s) for s in entry["shape"])
            tag = entry["dtype"]
            start = int(entry["byte_offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed entry {name!r}: {exc}") from exc
        if tag not in _DTYPES:
            raise ValueError(f"{path}: entry {name!r} has unknown dtype {tag!r}")
        if any(s < 0 for s in shape):
            raise ValueError(f"{path}: entry {name!r} has negative shape {shape}")
        if name in arrays:
            raise ValueError(f"{path}: duplicate entry {name!r}")
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if start < 0:
            raise ValueError(f"{path}: entry {name!r} has negative offset {start}")
        if start < prev_end:
            raise ValueError(
                f"{path}: entry {name!r} overlaps entry {prev_name!r} "
                f"(offset {start} < {prev_end})")
        if start + nbytes > len(data):
            raise ValueError(
                f"{path}: entry {name!r} is truncated "
                f"(needs bytes {start}..{start + nbytes}, have {len(data)})")
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=start).reshape(shape)
        arrays[name] = arr.copy()
        prev_end = start + nbytes
        prev_name = name
    rng_b64 = manifest.get("rng_state")
    rng_state = base64.b64decode(rng_b64) if rng_b64 else None
    step = manifest.get("step")
    if not isinstance(step, int) or step < 0:
        raise ValueError(f"{path}: invalid step {step!r}")
    snapshot = manifest.get("config_snapshot", "")
    if not isinstance(snapshot, str):
        raise ValueError(f"{path}: config_snapshot must be text, got {type(snapshot).__name__}")
    return Checkpoint(step=step, config_snapshot=snapshot, arrays=arrays,
                      rng_state=rng_state, format_version=version)
