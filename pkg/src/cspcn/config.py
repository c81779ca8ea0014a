"""Central configuration: architecture, loss, and training hyperparameters.

Everything the model leaves open is pinned here, in one place, and validated
on load.  The on-disk format is a flat UTF-8 ``key = value`` document with
``#`` comments; keys are exactly the dataclass field names below.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

STAGE_KINDS = ("cm2s", "3s", "aed", "mlfp")
SCHEDULES = ("step_halving", "cosine")


class ConfigError(ValueError):
    """Raised for unreadable, unparseable, or invariant-violating configs.

    ``key`` names the offending config key (or file) so batch callers can
    report it without string-parsing the message.
    """

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``stage_kinds`` selects the per-stage sub-network layout for ablations;
    ``None`` means the canonical layout for ``stages`` (context-mining stages
    first, the space-synthesis stage last when there are three).
    """

    image_channels: int = 3
    base_width: int = 64
    aed_scales: int = 3
    mlfp_dilations: tuple[int, ...] = (1, 2, 3, 2, 1)
    mcac_dilations: tuple[int, ...] = (1, 2, 3)
    cascade_dabs: int = 4
    dab_reduction: int = 8
    stages: int = 3
    use_mcac: bool = True
    mcac_temperature: bool = False
    stage_kinds: tuple[str, ...] | None = None

    def resolved_stage_kinds(self) -> tuple[str, ...]:
        if self.stage_kinds is not None:
            return self.stage_kinds
        if self.stages == 3:
            return ("cm2s", "cm2s", "3s")
        return ("cm2s",) * self.stages

    def has_aed(self) -> bool:
        return any(k in ("cm2s", "aed") for k in self.resolved_stage_kinds())

    def pad_multiple(self) -> int:
        """Spatial divisibility the encoder-decoder stages require."""
        return 2 ** (self.aed_scales - 1) if self.has_aed() else 1


@dataclass(frozen=True)
class LossConfig:
    """Composite-objective settings.

    ``epsilon`` is the smoothing constant shared by the Charbonnier and edge
    terms; ``lambda1``/``lambda2`` weight the edge and decoder-reconstruction
    terms against the per-stage Charbonnier terms.
    """

    epsilon: float = 1e-3
    lambda1: float = 0.05
    lambda2: float = 0.1
    laplacian_neighbors: int = 4


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 64
    iterations: int = 400_000
    schedule: str = "step_halving"
    lr_init: float | None = None
    lr_floor: float = 1e-6
    step_interval: int = 100_000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    sigma: float = 30.0
    sigma_max: float | None = None
    checkpoint_interval: int = 5000
    val_fraction: float = 0.05
    grad_clip: float = 0.0

    def initial_lr(self) -> float:
        """Schedule-dependent default when ``lr_init`` is unset."""
        if self.lr_init is not None:
            return self.lr_init
        return 1e-4 if self.schedule == "step_halving" else 2e-4


# ---------------------------------------------------------------------------
# parsing

def _parse_int(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    body = s.strip().strip("[]()")
    parts = [p for p in body.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(_parse_int(p) for p in parts)


def _parse_str_list(s: str) -> tuple[str, ...]:
    body = s.strip().strip("[]()")
    parts = [p.strip() for p in body.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(parts)


_PARSERS = {
    # ModelConfig
    "image_channels": _parse_int,
    "base_width": _parse_int,
    "aed_scales": _parse_int,
    "mlfp_dilations": _parse_int_list,
    "mcac_dilations": _parse_int_list,
    "cascade_dabs": _parse_int,
    "dab_reduction": _parse_int,
    "stages": _parse_int,
    "use_mcac": _parse_bool,
    "mcac_temperature": _parse_bool,
    "stage_kinds": _parse_str_list,
    # LossConfig
    "epsilon": _parse_float,
    "lambda1": _parse_float,
    "lambda2": _parse_float,
    "laplacian_neighbors": _parse_int,
    # TrainConfig
    "batch_size": _parse_int,
    "patch_size": _parse_int,
    "iterations": _parse_int,
    "schedule": str,
    "lr_init": _parse_float,
    "lr_floor": _parse_float,
    "step_interval": _parse_int,
    "seed": _parse_int,
    "adam_beta1": _parse_float,
    "adam_beta2": _parse_float,
    "sigma": _parse_float,
    "sigma_max": _parse_float,
    "checkpoint_interval": _parse_int,
    "val_fraction": _parse_float,
    "grad_clip": _parse_float,
}

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_LOSS_KEYS = {f.name for f in fields(LossConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def parse_config(text: str) -> tuple[ModelConfig, LossConfig, TrainConfig]:
    """Parse a flat key-value document into the three config objects.

    Absent keys take their defaults; every assignment is validated before
    the configs are returned.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, "unknown config key")
        if key in raw:
            raise ConfigError(key, "duplicate config key")
        raw[key] = value

    parsed: dict[str, object] = {}
    for key, value in raw.items():
        try:
            parsed[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(key, f"unparseable value {value!r} ({exc})") from exc

    model = ModelConfig(**{k: v for k, v in parsed.items() if k in _MODEL_KEYS})
    loss = LossConfig(**{k: v for k, v in parsed.items() if k in _LOSS_KEYS})
    train = TrainConfig(**{k: v for k, v in parsed.items() if k in _TRAIN_KEYS})
    validate_configs(model, loss, train)
    return model, loss, train


def load_config(path: str | Path) -> tuple[ModelConfig, LossConfig, TrainConfig]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    return parse_config(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# validation

def _require(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(key, message)


def validate_configs(model: ModelConfig, loss: LossConfig, train: TrainConfig) -> None:
    """Check every config invariant; raises ConfigError naming the bad key."""
    _require(model.image_channels in (1, 3), "image_channels", "must be 1 (grayscale) or 3 (color)")
    _require(model.base_width >= 1, "base_width", "must be >= 1")
    _require(model.aed_scales >= 2, "aed_scales", "must be >= 2")
    _require(len(model.mlfp_dilations) >= 1 and all(d >= 1 for d in model.mlfp_dilations),
             "mlfp_dilations", "all dilation rates must be >= 1")
    _require(len(model.mcac_dilations) >= 1 and all(d >= 1 for d in model.mcac_dilations),
             "mcac_dilations", "all dilation rates must be >= 1")
    _require(model.cascade_dabs >= 1, "cascade_dabs", "must be >= 1")
    _require(model.dab_reduction >= 1, "dab_reduction", "must be >= 1")
    _require(model.base_width % model.dab_reduction == 0,
             "base_width", f"must be divisible by dab_reduction ({model.dab_reduction})")
    _require(model.stages in (1, 2, 3), "stages", "must be 1, 2, or 3")
    if model.stage_kinds is not None:
        _require(len(model.stage_kinds) == model.stages,
                 "stage_kinds", f"must list exactly {model.stages} stage kinds")
        for kind in model.stage_kinds:
            _require(kind in STAGE_KINDS, "stage_kinds",
                     f"unknown stage kind {kind!r}, expected one of {STAGE_KINDS}")
    aed_stages = sum(1 for k in model.resolved_stage_kinds() if k in ("cm2s", "aed"))
    _require(aed_stages <= 2, "stage_kinds", "at most two stages may contain an encoder-decoder")

    _require(loss.epsilon > 0, "epsilon", "must be > 0")
    _require(loss.lambda1 >= 0, "lambda1", "must be >= 0")
    _require(loss.lambda2 >= 0, "lambda2", "must be >= 0")
    _require(loss.laplacian_neighbors in (4, 8), "laplacian_neighbors", "must be 4 or 8")

    _require(train.batch_size >= 1, "batch_size", "must be >= 1")
    _require(train.iterations >= 1, "iterations", "must be >= 1")
    _require(train.schedule in SCHEDULES, "schedule", f"must be one of {SCHEDULES}")
    _require(train.lr_floor > 0, "lr_floor", "must be > 0")
    _require(train.initial_lr() > train.lr_floor, "lr_init",
             f"must exceed lr_floor ({train.lr_floor})")
    _require(train.step_interval >= 1, "step_interval", "must be >= 1")
    _require(0 <= train.adam_beta1 < 1, "adam_beta1", "must be in [0, 1)")
    _require(0 <= train.adam_beta2 < 1, "adam_beta2", "must be in [0, 1)")
    _require(train.sigma >= 0, "sigma", "must be >= 0")
    if train.sigma_max is not None:
        _require(train.sigma_max >= train.sigma, "sigma_max", "must be >= sigma")
    _require(train.checkpoint_interval >= 1, "checkpoint_interval", "must be >= 1")
    _require(0 <= train.val_fraction < 1, "val_fraction", "must be in [0, 1)")
    _require(train.grad_clip >= 0, "grad_clip", "must be >= 0")
    _require(train.patch_size >= 1, "patch_size", "must be >= 1")
    multiple = 2 ** (model.aed_scales - 1)
    _require(train.patch_size % multiple == 0, "patch_size",
             f"must be divisible by {multiple} (2^(aed_scales-1))")


# ---------------------------------------------------------------------------
# serialization

def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(model: ModelConfig, loss: LossConfig, train: TrainConfig) -> str:
    """Serialize the configs back into the flat document format.

    ``parse_config(dump_config(...))`` returns field-equal configs.
    """
    lines = []
    for section, cfg in (("model", model), ("loss", loss), ("training", train)):
        lines.append(f"# {section}")
        for f in fields(cfg):
            value = getattr(cfg, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def save_config(model: ModelConfig, loss: LossConfig, train: TrainConfig, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".part{os.getpid()}")
    try:
        tmp.write_text(dump_config(model, loss, train), encoding="utf-8")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)

