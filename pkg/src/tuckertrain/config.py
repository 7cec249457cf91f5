"""Flat `key = value` experiment configuration.

One key per line, `#` starts a comment, blank lines ignored.  Unknown
keys are rejected so typos fail loudly before any training starts.
The OUTPUT_DIR_ENV environment variable overrides output_dir (and only
output_dir).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .errors import ConfigError

OUTPUT_DIR_ENV = "TUCKERTRAIN_OUTPUT_DIR"

MODELS = ("vgg-mini", "convnet-small")
DATASETS = ("cifar10", "mnist")


@dataclass
class ExperimentConfig:
    model: str = "vgg-mini"
    dataset: str = "cifar10"
    data_dir: str = "data"
    subset: int | None = None
    eval_subset: int | None = None
    epochs: int = 30
    batch_size: int = 128
    lr_milestones: dict[int, float] = field(default_factory=lambda: {0: 0.1, 15: 0.01, 25: 0.001})
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    threads: int = 1
    decompose_at: int | None = None
    reconstruct_at: int | None = None
    min_channels: int = 16
    min_compression: float = 1.05
    output_dir: str = "runs/default"

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not self.lr_milestones:
            raise ConfigError("lr_milestones cannot be empty")
        if self.subset is not None and self.subset < 1:
            raise ConfigError(f"subset must be >= 1, got {self.subset}")
        if self.eval_subset is not None and self.eval_subset < 1:
            raise ConfigError(f"eval_subset must be >= 1, got {self.eval_subset}")
        if self.decompose_at is not None and not 1 <= self.decompose_at <= self.epochs:
            raise ConfigError(
                f"decompose_at {self.decompose_at} outside 1..epochs ({self.epochs})"
            )
        if self.reconstruct_at is not None:
            if self.decompose_at is None:
                raise ConfigError("reconstruct_at requires decompose_at")
            if not self.decompose_at < self.reconstruct_at < self.epochs:
                raise ConfigError(
                    f"need decompose_at < reconstruct_at < epochs, got "
                    f"{self.decompose_at} / {self.reconstruct_at} / {self.epochs}"
                )
        if self.min_compression <= 0:
            raise ConfigError("min_compression must be positive")


def _parse_milestones(text: str) -> dict[int, float]:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            epoch_s, lr_s = part.split(":")
            out[int(epoch_s)] = float(lr_s)
        except ValueError as e:
            raise ConfigError(f"bad lr milestone {part!r} (want epoch:lr)") from e
    return out


_INT_KEYS = {"subset", "eval_subset", "epochs", "batch_size", "seed", "threads",
             "decompose_at", "reconstruct_at", "min_channels"}
_FLOAT_KEYS = {"momentum", "weight_decay", "min_compression"}
_STR_KEYS = {"model", "dataset", "data_dir", "output_dir"}


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "lr_milestones":
            cfg.lr_milestones = _parse_milestones(value)
        elif key in _INT_KEYS:
            try:
                setattr(cfg, key, int(value))
            except ValueError as e:
                raise ConfigError(f"line {lineno}: {key} wants an integer, got {value!r}") from e
        elif key in _FLOAT_KEYS:
            try:
                setattr(cfg, key, float(value))
            except ValueError as e:
                raise ConfigError(f"line {lineno}: {key} wants a number, got {value!r}") from e
        elif key in _STR_KEYS:
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        cfg.output_dir = env_out
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text)
