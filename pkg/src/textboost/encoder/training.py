"""Training loops: weighted cross-entropy fine-tuning and toy MLM pretraining."""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np

from ..textdata import CLS_ID, MASK_ID, SEP_ID, LabeledDataset, Packed
from . import nnops
from .config import EncoderConfig, SoftregConfig, TrainConfig
from .nnops import DivergenceError
from .optim import Adam
from .params import ModelSnapshot
from .softreg import SoftmaxRegressionModel
from .transformer import TransformerModel

MLM_MASK_FRACTION = 0.15


def new_model(config, *, seed=None):
    if isinstance(config, EncoderConfig):
        return TransformerModel(config, seed=seed)
    if isinstance(config, SoftregConfig):
        return SoftmaxRegressionModel(config, seed=seed)
    raise TypeError(f"no model for {type(config).__name__}")


def model_from_snapshot(snap: ModelSnapshot):
    if snap.kind == "transformer":
        return TransformerModel.from_snapshot(snap)
    if snap.kind == "softreg":
        return SoftmaxRegressionModel.from_snapshot(snap)
    raise ValueError(f"unknown snapshot kind {snap.kind!r}")


def forward(model, batch, train_mode: bool = False, rng=None) -> np.ndarray:
    """Softmax distributions for a Packed batch, LabeledDataset, or example list."""
    packed = _as_packed(batch)
    if train_mode:
        return model.forward_probs(packed, train_mode=True, rng=rng)
    return model.predict_proba(packed)


def _as_packed(batch) -> Packed:
    if isinstance(batch, Packed):
        return batch
    if isinstance(batch, LabeledDataset):
        return batch.packed
    from ..textdata import pack

    return pack(batch)


def weighted_ce_loss(
    probs: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Per-example loss w_i * (-log p[y_i]) and its batch mean.

    Weights are used exactly as given (no renormalization). Probabilities
    below 1e-12 are clamped with a warning, which signals a confidently
    wrong model rather than a numerical bug here.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if not (weights > 0).all():
        raise ValueError("weights must be strictly positive")
    picked = probs[np.arange(labels.size), labels]
    if (picked < nnops.PROB_FLOOR).any():
        warnings.warn("clamping near-zero predicted probability before log", RuntimeWarning)
        picked = np.maximum(picked, nnops.PROB_FLOOR)
    per_example = weights * -np.log(picked)
    return float(per_example.mean()), per_example


def gradients(model, batch, labels=None, weights=None) -> np.ndarray:
    """Analytic gradient of the weighted CE loss, dropout disabled."""
    packed = _as_packed(batch)
    if labels is None:
        labels = packed.labels
    if weights is not None and not (np.asarray(weights) > 0).all():
        raise ValueError("weights must be strictly positive")
    _, _, g = model.clf_loss_and_grad(packed, labels, weights, train_mode=False)
    return g


def train(
    model,
    dataset: LabeledDataset,
    cfg: TrainConfig,
    seed,
    *,
    weights: Optional[np.ndarray] = None,
    targets: Optional[np.ndarray] = None,
) -> tuple[ModelSnapshot, list[dict]]:
    """Mini-batch Adam on the weighted CE loss; deterministic given seed.

    Mutates ``model`` in place and returns its final snapshot (role
    "finetuned") plus one log record per step. A non-finite loss aborts
    immediately with the last finite parameters.
    """
    if dataset.n == 0:
        raise ValueError("dataset must be non-empty")
    packed = dataset.packed
    if weights is None:
        weights = packed.weights
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (dataset.n,):
        raise ValueError("weights must have one entry per example")
    if not (weights > 0).all():
        raise ValueError("weights must be strictly positive")

    rng = np.random.default_rng(seed)
    opt = Adam(model.params.size, lr=cfg.lr)
    batches_per_epoch = int(np.ceil(dataset.n / cfg.batch_size))
    total_steps = cfg.epochs * batches_per_epoch
    warmup = max(1, int(round(cfg.warmup_fraction * total_steps)))
    log: list[dict] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(dataset.n)
        for start in range(0, dataset.n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = packed.take(idx)
            batch_targets = targets[idx] if targets is not None else batch.labels
            opt.lr = cfg.lr * min(1.0, (step + 1) / warmup)
            try:
                loss, _, grad = model.clf_loss_and_grad(
                    batch, batch_targets, weights[idx], train_mode=True, rng=rng
                )
            except DivergenceError:
                log.append({"step": step, "loss": None, "lr": opt.lr, "event": "diverged"})
                return model.snapshot("finetuned"), log
            if not np.isfinite(loss) or not np.isfinite(grad).all():
                log.append({"step": step, "loss": None, "lr": opt.lr, "event": "diverged"})
                return model.snapshot("finetuned"), log
            opt.step(model.params, grad)
            step += 1
            log.append({"step": step, "loss": loss, "lr": opt.lr})
    return model.snapshot("finetuned"), log


def evaluate_accuracy(model, dataset: LabeledDataset) -> float:
    """Percent accuracy in eval mode."""
    probs = model.predict_proba(dataset.packed)
    return float((probs.argmax(axis=1) == dataset.labels).mean() * 100.0)


def pretrain_mlm(
    corpus: Sequence[Sequence[int]],
    config: EncoderConfig,
    steps: int,
    seed,
    *,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> tuple[ModelSnapshot, list[dict]]:
    """Masked-token pretraining on raw token-id sequences.

    Sequences are laid out as ``[CLS] tokens [SEP]`` (matching the
    classification input geometry); 15% of the content positions per
    sequence (at least one) are replaced by MASK and the model is trained
    to recover the original ids. Sequences shorter than 2 content tokens
    are skipped; the classification head is left at its random
    initialization. ``steps == 0`` returns the random init as-is.
    """
    rng = np.random.default_rng(seed)
    model = TransformerModel(config, seed=rng)
    usable = [
        np.concatenate(([CLS_ID], np.asarray(s, dtype=np.int64)[: config.max_seq_len - 2], [SEP_ID]))
        for s in corpus
        if len(s) >= 2
    ]
    if steps == 0:
        return model.snapshot("pretrained"), []
    if not usable:
        raise ValueError("corpus has no sequences of length >= 2")
    if any((s >= config.vocab_size).any() or (s < 0).any() for s in usable):
        raise ValueError("corpus token id outside the vocabulary")

    opt = Adam(model.params.size, lr=lr)
    warmup = max(1, int(round(0.1 * steps)))
    log: list[dict] = []
    step = 0
    while step < steps:
        order = rng.permutation(len(usable))
        for start in range(0, len(usable), batch_size):
            if step >= steps:
                break
            group = [usable[i] for i in order[start : start + batch_size]]
            ids, lengths, rows, cols, targets = _mask_batch(group, rng)
            opt.lr = lr * min(1.0, (step + 1) / warmup)
            loss, grad = model.mlm_loss_and_grad(
                ids, lengths, rows, cols, targets, train_mode=True, rng=rng
            )
            if not np.isfinite(loss):
                log.append({"step": step, "loss": None, "lr": opt.lr, "event": "diverged"})
                return model.snapshot("pretrained"), log
            opt.step(model.params, grad)
            step += 1
            log.append({"step": step, "loss": loss, "lr": opt.lr})
    return model.snapshot("pretrained"), log


def _mask_batch(seqs: list[np.ndarray], rng):
    """Mask 15% of content positions (CLS/SEP delimiters are never masked)."""
    lmax = max(s.size for s in seqs)
    ids = np.zeros((len(seqs), lmax), dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    rows, cols, targets = [], [], []
    for i, s in enumerate(seqs):
        ids[i, : s.size] = s
        lengths[i] = s.size
        content = s.size - 2
        n_mask = max(1, int(round(MLM_MASK_FRACTION * content)))
        pos = rng.choice(content, size=n_mask, replace=False) + 1
        for p in pos:
            rows.append(i)
            cols.append(int(p))
            targets.append(int(s[p]))
            ids[i, p] = MASK_ID
    return ids, lengths, np.array(rows), np.array(cols), np.array(targets)


def mlm_masked_accuracy(snapshot: ModelSnapshot, corpus: Sequence[Sequence[int]], seed) -> float:
    """Top-1 accuracy at masked positions under a fresh masking draw."""
    model = TransformerModel.from_snapshot(snapshot)
    rng = np.random.default_rng(seed)
    cap = model.config.max_seq_len - 2
    usable = [
        np.concatenate(([CLS_ID], np.asarray(s, dtype=np.int64)[:cap], [SEP_ID]))
        for s in corpus
        if len(s) >= 2
    ]
    ids, lengths, rows, cols, targets = _mask_batch(usable, rng)
    segs = np.zeros_like(ids)
    h, _ = model._trunk_forward(ids, segs, lengths, train=False, rng=None)
    logits = h[rows, cols] @ model.p["mlm.w"] + model.p["mlm.b"]
    return float((logits.argmax(axis=1) == targets).mean())
