"""Flat parameter vectors, layout tables, snapshots, and checkpoint IO.

Checkpoint container: magic ``BGV1``, a length-prefixed JSON header
(kind, role, config, config hash, layout table, parameter count), then the
parameter block as little-endian float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import EncoderConfig, SoftregConfig, config_from_dict, config_hash

CHECKPOINT_MAGIC = b"BGV1"

ROLES = ("random", "pretrained", "finetuned")


@dataclass(frozen=True)
class ParamLayout:
    """Ordered (name, shape) table mapping a flat vector to named views."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def total(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.entries)

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if flat.shape != (self.total,):
            raise ValueError(f"parameter vector has {flat.shape}, layout wants ({self.total},)")
        out: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self.entries:
            size = int(np.prod(shape))
            out[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return out

    def slice_of(self, name: str) -> slice:
        offset = 0
        for n, shape in self.entries:
            size = int(np.prod(shape))
            if n == name:
                return slice(offset, offset + size)
            offset += size
        raise KeyError(name)

    def table(self) -> list[list]:
        return [[name, list(shape)] for name, shape in self.entries]


def transformer_layout(cfg: EncoderConfig) -> ParamLayout:
    d, f, V = cfg.d_model, cfg.d_ffn, cfg.vocab_size
    entries: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (V, d)),
        ("pos_emb", (cfg.max_seq_len, d)),
        ("seg_emb", (2, d)),
        ("emb_ln.g", (d,)),
        ("emb_ln.b", (d,)),
    ]
    for l in range(cfg.n_layers):
        p = f"layer{l}"
        entries += [
            (f"{p}.wq", (d, d)),
            (f"{p}.bq", (d,)),
            (f"{p}.wk", (d, d)),
            (f"{p}.bk", (d,)),
            (f"{p}.wv", (d, d)),
            (f"{p}.bv", (d,)),
            (f"{p}.wo", (d, d)),
            (f"{p}.bo", (d,)),
            (f"{p}.ln1.g", (d,)),
            (f"{p}.ln1.b", (d,)),
            (f"{p}.w1", (d, f)),
            (f"{p}.b1", (f,)),
            (f"{p}.w2", (f, d)),
            (f"{p}.b2", (d,)),
            (f"{p}.ln2.g", (d,)),
            (f"{p}.ln2.b", (d,)),
        ]
    entries += [
        ("mlm.w", (d, V)),
        ("mlm.b", (V,)),
        ("cls.w", (d, cfg.K)),
        ("cls.b", (cfg.K,)),
    ]
    return ParamLayout(entries=tuple(entries))


def softreg_layout(cfg: SoftregConfig) -> ParamLayout:
    return ParamLayout(entries=(("cls.w", (cfg.vocab_size, cfg.K)), ("cls.b", (cfg.K,))))


def layout_for(cfg) -> ParamLayout:
    if isinstance(cfg, EncoderConfig):
        return transformer_layout(cfg)
    if isinstance(cfg, SoftregConfig):
        return softreg_layout(cfg)
    raise TypeError(f"no layout for {type(cfg).__name__}")

# Classification-head parameter names (everything else is the trunk).
HEAD_NAMES = ("cls.w", "cls.b")


def xavier_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_param_vector(layout: ParamLayout, rng: np.random.Generator) -> np.ndarray:
    """Xavier-uniform matrices, zero biases, unit LayerNorm gains."""
    flat = np.zeros(layout.total, dtype=np.float64)
    views = layout.views(flat)
    for name, shape in layout.entries:
        if len(shape) == 2:
            lim = xavier_limit(shape[0], shape[1])
            views[name][:] = rng.uniform(-lim, lim, size=shape)
        elif name.endswith(".g"):
            views[name][:] = 1.0
    return flat


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable frozen model state: flat float64 params + config + role tag."""

    config: EncoderConfig | SoftregConfig
    params: np.ndarray
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        layout = layout_for(self.config)
        if self.params.shape != (layout.total,):
            raise ValueError("parameter count does not match layout")
        if not np.isfinite(self.params).all():
            raise ValueError("snapshot contains non-finite parameters")
        frozen = np.array(self.params, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "params", frozen)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def layout(self) -> ParamLayout:
        return layout_for(self.config)

    def view(self, name: str) -> np.ndarray:
        return self.layout.views(np.asarray(self.params))[name]

    def to_bytes(self) -> bytes:
        header = {
            "kind": self.kind,
            "role": self.role,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "layout": self.layout.table(),
            "param_count": int(self.params.size),
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return (
            CHECKPOINT_MAGIC
            + struct.pack("<I", len(hbytes))
            + hbytes
            + self.params.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelSnapshot":
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic (expected BGV1)")
        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8 : 8 + hlen].decode())
        cfg = config_from_dict(header["config"])
        count = header["param_count"]
        params = np.frombuffer(blob[8 + hlen :], dtype="<f8", count=count).astype(np.float64)
        snap = cls(config=cfg, params=params, role=header["role"])
        if snap.config_hash != header["config_hash"]:
            raise ValueError("config hash mismatch in checkpoint")
        return snap

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelSnapshot":
        return cls.from_bytes(Path(path).read_bytes())
