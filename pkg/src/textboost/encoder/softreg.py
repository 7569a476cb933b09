"""Softmax regression over bag-of-token counts (the low-capacity learner)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..textdata import PAD_ID, Packed
from . import nnops
from .config import SoftregConfig
from .nnops import DivergenceError
from .params import ModelSnapshot, init_param_vector, softreg_layout


def token_counts(batch: Packed, vocab_size: int) -> np.ndarray:
    """(B, V) matrix of non-PAD token counts (CLS/SEP included; they act
    as a duplicated bias and are harmless)."""
    B, L = batch.ids.shape
    valid = np.arange(L)[None, :] < batch.lengths[:, None]
    valid &= batch.ids != PAD_ID
    rows = np.repeat(np.arange(B), L)[valid.ravel()]
    cols = batch.ids.ravel()[valid.ravel()]
    counts = np.zeros((B, vocab_size), dtype=np.float64)
    np.add.at(counts, (rows, cols), 1.0)
    return counts


class SoftmaxRegressionModel:
    kind = "softreg"

    def __init__(self, config: SoftregConfig, params: Optional[np.ndarray] = None, *, seed=None):
        self.config = config
        self.layout = softreg_layout(config)
        if params is None:
            params = init_param_vector(self.layout, np.random.default_rng(seed))
        else:
            params = np.array(params, dtype=np.float64, copy=True)
        self.params = params
        self.p = self.layout.views(self.params)

    @classmethod
    def from_snapshot(cls, snap: ModelSnapshot) -> "SoftmaxRegressionModel":
        if snap.kind != "softreg":
            raise ValueError(f"snapshot kind {snap.kind!r} is not softreg")
        return cls(snap.config, params=snap.params)

    def snapshot(self, role: str) -> ModelSnapshot:
        return ModelSnapshot(config=self.config, params=self.params, role=role)

    def forward_probs(self, batch: Packed, train_mode: bool = False, rng=None) -> np.ndarray:
        del train_mode, rng  # no stochastic layers
        logits = token_counts(batch, self.config.vocab_size) @ self.p["cls.w"] + self.p["cls.b"]
        if not np.isfinite(logits).all():
            raise DivergenceError("softreg logits")
        return nnops.softmax_rows(logits)

    def predict_proba(self, batch: Packed, chunk: int = 4096) -> np.ndarray:
        del chunk
        return self.forward_probs(batch)

    def clf_loss_and_grad(
        self,
        batch: Packed,
        targets: np.ndarray,
        weights: Optional[np.ndarray] = None,
        train_mode: bool = False,
        rng=None,
    ) -> tuple[float, np.ndarray, np.ndarray]:
        del train_mode, rng
        B = batch.n
        if weights is None:
            weights = batch.weights
        weights = np.asarray(weights, dtype=np.float64)
        targets = np.asarray(targets)
        if targets.ndim == 1:
            t = np.zeros((B, self.config.K), dtype=np.float64)
            t[np.arange(B), targets.astype(np.int64)] = 1.0
        else:
            t = targets.astype(np.float64)
        counts = token_counts(batch, self.config.vocab_size)
        probs = nnops.softmax_rows(counts @ self.p["cls.w"] + self.p["cls.b"])
        per_example = weights * -(t * np.log(np.maximum(probs, nnops.PROB_FLOOR))).sum(axis=1)
        loss = float(per_example.mean())

        d_logits = (probs - t) * (weights / B)[:, None]
        g = np.zeros_like(self.params)
        gv = self.layout.views(g)
        gv["cls.w"] += counts.T @ d_logits
        gv["cls.b"] += d_logits.sum(axis=0)
        return loss, per_example, g
