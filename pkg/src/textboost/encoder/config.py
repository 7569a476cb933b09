"""Model and training configuration dataclasses."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class EncoderConfig:
    """Tiny transformer encoder configuration.

    Defaults are sized so a full experiment grid runs in minutes on a
    laptop: 2 layers of width 32 with 2 heads.
    """

    vocab_size: int
    K: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ffn: int = 64
    max_seq_len: int = 64
    dropout_rate: float = 0.1

    kind = "transformer"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("vocab_size", "K", "d_model", "n_layers", "n_heads", "d_ffn", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind
        return d


@dataclass(frozen=True)
class SoftregConfig:
    """Softmax regression over bag-of-token counts; the low-capacity learner."""

    vocab_size: int
    K: int

    kind = "softreg"

    def __post_init__(self) -> None:
        if self.vocab_size < 1 or self.K < 2:
            raise ValueError("vocab_size must be >= 1 and K >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind
        return d


def config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "transformer":
        return EncoderConfig(**d)
    if kind == "softreg":
        return SoftregConfig(**d)
    raise ValueError(f"unknown model kind {kind!r}")


def config_hash(cfg) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer-loop hyperparameters (batch 32 and 3 epochs by default).

    ``warmup_fraction`` ramps the learning rate linearly over the first
    fraction of steps; without it the early bias-corrected Adam updates act
    like full-size sign steps and can scramble a warm-started model.
    """

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 3
    warmup_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid TrainConfig")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
