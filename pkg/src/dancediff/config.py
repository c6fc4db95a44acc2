"""Flat key-value run configuration shared by the CLI commands.

The file format is one `key = value` per line, `#` comments allowed. Every
key is validated against the schema below before any compute starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import LossWeights, ModelConfig


@dataclass
class RunConfig:
    # model
    layers: int = 8
    heads: int = 8
    model_dim: int = 512
    mlp_dim: int = 1024
    dropout: float = 0.1
    cond_dim: int = 35
    seq_len: int = 150
    cond_dropout_prob: float = 0.25
    ema_decay: float = 0.9999
    # loss weights
    lambda_pos: float = 1.0
    lambda_vel: float = 1.0
    lambda_contact: float = 1.0
    # sampling
    guidance_weight: float = 2.0
    guidance_dropout: float = 0.0
    # training
    timesteps: int = 1000
    lr: float = 4e-4
    lr_decay: str = "none"
    optimizer: str = "adan"
    batch_size: int = 8
    steps: int = 1000
    checkpoint_every: int = 200
    # data / run
    fps: float = 30.0
    seed: int = 0
    manifest: str = ""
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.steps < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("steps, batch_size and checkpoint_every must be >= 1")
        if self.lr <= 0 or self.fps <= 0:
            raise ConfigError("lr and fps must be positive")
        if self.optimizer not in ("adan", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("none", "cosine"):
            raise ConfigError(f"unknown lr_decay {self.lr_decay!r}")
        if self.guidance_weight < 0 or not 0 <= self.guidance_dropout < 1:
            raise ConfigError("bad guidance settings")
        try:
            self.model_config()
            self.loss_weights()
        except Exception as e:
            raise ConfigError(str(e)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            layers=self.layers,
            heads=self.heads,
            model_dim=self.model_dim,
            mlp_dim=self.mlp_dim,
            dropout=self.dropout,
            cond_dim=self.cond_dim,
            seq_len=self.seq_len,
            cond_dropout_prob=self.cond_dropout_prob,
            ema_decay=self.ema_decay,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            pos=self.lambda_pos, vel=self.lambda_vel, contact=self.lambda_contact
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, f"{path}:{lineno}")
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def _coerce(key: str, val: str, where: str):
    ftype = _FIELD_TYPES[key]
    try:
        if ftype in ("int", int):
            return int(val)
        if ftype in ("float", float):
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {val!r} as {ftype} for {key!r}") from None


def save_config(cfg: RunConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
