"""Stage-2 fusion network: an MLP over the concatenated, alpha-scaled
softmax outputs of the frozen base classifiers.

The feature for one example is ``concat_m(alpha_m * p_m)`` of length M*K,
so block m sums to alpha_m. Base parameters are never touched here; this is
verified byte-for-byte around every training run.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .boosting import BoostEnsemble
from .encoder import Adam
from .encoder.nnops import PROB_FLOOR, softmax_rows
from .encoder.params import xavier_limit

FUSION_MAGIC = b"BGF1"


@dataclass(frozen=True)
class FusionConfig:
    depth: int = 1  # number of hidden layers, 0..3
    hidden_multiple: int = 4  # hidden width = multiple * M * K
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3

    def __post_init__(self) -> None:
        if not 0 <= self.depth <= 3:
            raise ValueError("depth must be in 0..3")
        if self.hidden_multiple < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("invalid FusionConfig")


class FusionHead:
    """ReLU MLP mapping an (M*K)-dim fusion feature to K logits."""

    def __init__(self, dims: tuple[int, ...], params: Optional[np.ndarray] = None,
                 *, ensemble_hash: str = "", seed=None):
        if len(dims) < 2:
            raise ValueError("dims needs at least input and output sizes")
        self.dims = tuple(int(d) for d in dims)
        self.ensemble_hash = ensemble_hash
        total = sum(a * b + b for a, b in zip(self.dims[:-1], self.dims[1:]))
        if params is None:
            rng = np.random.default_rng(seed)
            params = np.zeros(total, dtype=np.float64)
            off = 0
            for a, b in zip(self.dims[:-1], self.dims[1:]):
                lim = xavier_limit(a, b)
                params[off : off + a * b] = rng.uniform(-lim, lim, size=a * b)
                off += a * b + b  # biases stay zero
        else:
            params = np.array(params, dtype=np.float64, copy=True)
            if params.shape != (total,):
                raise ValueError("parameter vector does not match dims")
        self.params = params

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def n_params(self) -> int:
        return self.params.size

    def _unpack(self, flat: np.ndarray):
        out = []
        off = 0
        for a, b in zip(self.dims[:-1], self.dims[1:]):
            w = flat[off : off + a * b].reshape(a, b)
            off += a * b
            bias = flat[off : off + b]
            off += b
            out.append((w, bias))
        return out

    def logits(self, features: np.ndarray) -> np.ndarray:
        a = np.asarray(features, dtype=np.float64)
        layers = self._unpack(self.params)
        for w, b in layers[:-1]:
            a = np.maximum(a @ w + b, 0.0)
        w, b = layers[-1]
        return a @ w + b

    def probs(self, features: np.ndarray) -> np.ndarray:
        return softmax_rows(self.logits(features))

    def loss_and_grad(self, features: np.ndarray, labels: np.ndarray):
        """Unweighted mean CE and the flat gradient."""
        B = features.shape[0]
        layers = self._unpack(self.params)
        acts = [np.asarray(features, dtype=np.float64)]
        pre: list[np.ndarray] = []
        a = acts[0]
        for w, b in layers[:-1]:
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        w, b = layers[-1]
        logits = a @ w + b
        p = softmax_rows(logits)
        picked = np.maximum(p[np.arange(B), labels], PROB_FLOOR)
        loss = float(-np.log(picked).mean())

        grad = np.zeros_like(self.params)
        gviews = self._unpack(grad)
        d = p.copy()
        d[np.arange(B), labels] -= 1.0
        d /= B
        for i in reversed(range(len(layers))):
            gw, gb = gviews[i]
            gw += acts[i].T @ d
            gb += d.sum(axis=0)
            if i > 0:
                d = (d @ layers[i][0].T) * (pre[i - 1] > 0.0)
        return loss, grad

    # -- persistence ------------------------------------------------------
    def to_bytes(self) -> bytes:
        header = {"dims": list(self.dims), "ensemble_hash": self.ensemble_hash}
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return FUSION_MAGIC + struct.pack("<I", len(hb)) + hb + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FusionHead":
        if blob[:4] != FUSION_MAGIC:
            raise ValueError("bad fusion magic (expected BGF1)")
        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8 : 8 + hlen].decode())
        params = np.frombuffer(blob[8 + hlen :], dtype="<f8").astype(np.float64)
        return cls(tuple(header["dims"]), params=params, ensemble_hash=header["ensemble_hash"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "FusionHead":
        return cls.from_bytes(Path(path).read_bytes())


def build_feature(ensemble: BoostEnsemble, dataset) -> np.ndarray:
    """(n, M*K) matrix of alpha-scaled, round-ordered softmax blocks."""
    probs = ensemble.predict_proba_per_round(dataset)  # (n, M, K)
    scaled = ensemble.alphas[None, :, None] * probs
    return scaled.reshape(probs.shape[0], -1)


def head_dims(ensemble: BoostEnsemble, cfg: FusionConfig) -> tuple[int, ...]:
    mk = ensemble.m_effective * ensemble.K
    return (mk, *([cfg.hidden_multiple * mk] * cfg.depth), ensemble.K)


def train_fusion(
    ensemble: BoostEnsemble,
    train_ds,
    dev_ds,
    cfg: FusionConfig,
    seed: int,
) -> tuple[FusionHead, list[dict]]:
    """Train the fusion MLP on frozen base outputs.

    Unweighted cross-entropy over the training split, Adam, early stopping
    on dev accuracy with the configured patience; the best-dev parameters
    are returned. Asserts the base parameters are byte-identical before and
    after (the bases are never part of this optimization).
    """
    digest_before = ensemble.params_digest()
    feats_train = build_feature(ensemble, train_ds)
    feats_dev = build_feature(ensemble, dev_ds) if dev_ds is not None else None

    rng = np.random.default_rng([seed, 21])
    head = FusionHead(head_dims(ensemble, cfg), ensemble_hash=ensemble.content_hash(), seed=rng)
    opt = Adam(head.n_params, lr=cfg.lr)
    labels = train_ds.labels
    n = labels.shape[0]

    best_params = head.params.copy()
    best_acc = -np.inf
    since_best = 0
    log: list[dict] = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        diverged = False
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = head.loss_and_grad(feats_train[idx], labels[idx])
            if not np.isfinite(loss):
                diverged = True
                break
            opt.step(head.params, grad)
            epoch_loss += loss * idx.size
        entry = {"epoch": epoch, "loss": epoch_loss / n}
        if feats_dev is not None:
            dev_acc = float(
                (head.probs(feats_dev).argmax(axis=1) == dev_ds.labels).mean() * 100.0
            )
            entry["dev_acc"] = dev_acc
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_params = head.params.copy()
                since_best = 0
            else:
                since_best += 1
        log.append(entry)
        if diverged:
            entry["event"] = "diverged"
            break
        if feats_dev is not None and since_best > cfg.patience:
            break
    if feats_dev is not None:
        head.params[:] = best_params

    if ensemble.params_digest() != digest_before:
        raise RuntimeError("fusion training mutated frozen base parameters")
    return head, log


def fusion_predict(ensemble: BoostEnsemble, head: FusionHead, dataset):
    """(label ids, probability rows) from the fusion head."""
    expected = ensemble.m_effective * ensemble.K
    if head.input_dim != expected:
        raise ValueError(
            f"fusion head expects {head.input_dim}-dim features, ensemble yields {expected}"
        )
    probs = head.probs(build_feature(ensemble, dataset))
    return probs.argmax(axis=1), probs
