"""Run configuration: a flat key = value file mapped onto TrainConfig.

Example file::

    # training
    steps = 500
    norm = renorm
    judge = oracle
    learning_rate = 2.0

Unknown keys and type mismatches fail at load time, before any work starts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .rewards import NORM_KINDS

JUDGE_BACKENDS = ("oracle", "remote")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # reproducibility
    seed: int = 0
    world_seed: int = 0
    question_seed: int = 0
    # world
    n_entities: int = 16
    n_relations: int = 3
    n_questions: int = 24
    hops: int = 1
    retrieve_k: int = 3
    max_turns: int = 2
    # reward / judge
    norm: str = "renorm"
    judge: str = "oracle"
    judge_endpoint: str = ""
    judge_timeout: float = 30.0
    judge_retries: int = 2
    judge_concurrency: int = 1
    # optimization
    steps: int = 200
    train_batch: int = 64
    mini_batch: int = 32
    micro_batch: int = 8
    ppo_epochs: int = 1
    gamma: float = 1.0
    lam: float = 1.0
    clip_eps: float = 0.001
    kl_beta: float = 0.001
    learning_rate: float = 2.0
    value_learning_rate: float = 0.5
    context_window: int = 6
    format_boost: float = 3.0  # 0 disables the demonstration-derived format init
    # outputs
    checkpoint_every: int = 50
    out_dir: str = "runs/default"

    def validate(self) -> "TrainConfig":
        if self.norm not in NORM_KINDS:
            raise ConfigError(f"norm must be one of {NORM_KINDS}, got {self.norm!r}")
        if self.judge not in JUDGE_BACKENDS:
            raise ConfigError(f"judge must be one of {JUDGE_BACKENDS}, got {self.judge!r}")
        if self.judge == "remote" and not self.judge_endpoint:
            raise ConfigError("judge = remote requires judge_endpoint")
        if self.hops not in (1, 2):
            raise ConfigError("hops must be 1 or 2")
        for key in (
            "steps", "train_batch", "mini_batch", "micro_batch", "ppo_epochs",
            "max_turns", "retrieve_k", "context_window", "checkpoint_every",
            "n_questions",
        ):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.n_entities < 4 or self.n_relations < 2:
            raise ConfigError("need n_entities >= 4 and n_relations >= 2")
        if not self.mini_batch <= self.train_batch:
            raise ConfigError("mini_batch must not exceed train_batch")
        if not self.micro_batch <= self.mini_batch:
            raise ConfigError("micro_batch must not exceed mini_batch")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.kl_beta < 0:
            raise ConfigError("kl_beta must be >= 0")
        for key in ("gamma", "lam"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return text


def parse_config_text(text: str, overrides: dict | None = None) -> TrainConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(value)) if isinstance(value, str) else value
    return TrainConfig(**values).validate()


def load_config(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), overrides)
