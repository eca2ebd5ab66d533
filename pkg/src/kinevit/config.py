"""Flat run configuration with presets, JSON round-trip, and strict key
validation.  Precedence: preset defaults, then config-file values, then
explicit overrides.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key."""


VARIANTS = ("baseline_naive", "hmrvit_nocrm", "hmrvit_full")


@dataclass
class PipelineConfig:
    preset: str = "toy"
    variant: str = "hmrvit_full"
    seed: int = 0
    # data
    seq_len: int = 15
    channels: int = 64
    train_size: int = 2000
    val_size: int = 200
    noise_sigma: float = 0.01
    amplitude: float = 1.0
    verts_per_joint: int = 4
    # model
    patch_t: int = 3
    patch_c: int = 8
    dim: int = 32
    depth: int = 2
    heads: int = 4
    out_dim: int = 64
    tau: float = 1.0
    # training
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    log_every: int = 1
    lambda_2d: float = 300.0
    lambda_3d: float = 300.0
    lambda_pose: float = 60.0
    lambda_shape: float = 0.06
    lambda_crm: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {tuple(PRESETS)}, got {self.preset!r}")
        positive = (
            "seq_len", "channels", "train_size", "val_size", "patch_t", "patch_c",
            "dim", "depth", "heads", "out_dim", "batch_size", "log_every", "verts_per_joint",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.seq_len % self.patch_t != 0:
            raise ConfigError(f"seq_len {self.seq_len} not divisible by patch_t {self.patch_t}")
        if self.channels % self.patch_c != 0:
            raise ConfigError(f"channels {self.channels} not divisible by patch_c {self.patch_c}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("lambda_2d", "lambda_3d", "lambda_pose", "lambda_shape", "lambda_crm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# Preset-level defaults.  The toy preset is the tested configuration; the
# full preset mirrors production-scale dimensions and is documentation only.
PRESETS: dict[str, dict] = {
    "toy": {},
    "full": {
        "preset": "full",
        "channels": 2048,
        "patch_c": 128,
        "dim": 512,
        "depth": 4,
        "heads": 8,
        "out_dim": 2048,
        "lr": 5e-5,
        "epochs": 300,
    },
}

_FIELD_NAMES = {f.name for f in fields(PipelineConfig)}
_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def build_config(
    preset: str = "toy",
    file_values: dict | None = None,
    overrides: dict | None = None,
) -> PipelineConfig:
    """Merge preset defaults, config-file values, and explicit overrides.

    Unknown keys are rejected with the offending key named.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {tuple(PRESETS)}")
    merged = dict(PRESETS[preset])
    merged.setdefault("preset", preset)
    for source_name, source in (("config file", file_values), ("override", overrides)):
        if not source:
            continue
        for key, value in source.items():
            if value is None:
                continue
            if key not in _FIELD_NAMES:
                raise ConfigError(f"unknown {source_name} key {key!r}")
            merged[key] = value
    try:
        return PipelineConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config_file(path: str | Path) -> dict:
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return values
