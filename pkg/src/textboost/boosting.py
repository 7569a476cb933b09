"""Stage-1 multi-class boosting over base classifiers.

Each round initializes a base model per the configured strategy, fine-tunes
it with the current instance weights multiplied into the per-example loss
(never renormalized), records its training-set predictions in eval mode,
computes the weighted error and the multi-class alpha
``ln((1-err)/err) + ln(K-1)``, and inflates the weights of misclassified
examples by ``exp(alpha)``. Rounds whose alpha is not positive are
discarded and boosting stops early.

Two parameter regimes are supported: weight privacy (every round owns a
full model) and weight sharing (one trunk evolves across rounds; each round
owns only a linear head, and inference binds every head to the final trunk).
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from . import encoder as enc

ERR_EPS = 1e-6  # alpha is singular at err in {0, 1}

ENSEMBLE_MAGIC = b"BGE1"

SHARING_MODES = ("privacy", "sharing")


class BoostingError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# weight-vector arithmetic (Algorithm steps 1, 2.3, 2.4, 2.5)
# ----------------------------------------------------------------------

def init_weights_uniform(n: int) -> np.ndarray:
    """Instance weights w_i = 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.full(n, 1.0 / n, dtype=np.float64)


def weighted_error(predictions: np.ndarray, labels: np.ndarray, w: np.ndarray) -> float:
    """sum(w_i over mistakes) / sum(w_i)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    w = np.asarray(w, dtype=np.float64)
    if not (predictions.shape == labels.shape == w.shape):
        raise ValueError("predictions, labels, and weights must have equal length")
    return float(np.sum(w[predictions != labels]) / np.sum(w))


def compute_alpha(err: float, K: int) -> float:
    """alpha = ln((1-err)/err) + ln(K-1), with err clamped to [eps, 1-eps]."""
    if K < 2:
        raise ValueError("K must be >= 2")
    if err <= 0.0 or err >= 1.0:
        warnings.warn(f"err={err} clamped into [{ERR_EPS}, {1 - ERR_EPS}]", RuntimeWarning)
    err = min(max(err, ERR_EPS), 1.0 - ERR_EPS)
    return float(np.log((1.0 - err) / err) + np.log(K - 1))


def update_weights(
    w: np.ndarray, predictions: np.ndarray, labels: np.ndarray, alpha: float
) -> np.ndarray:
    """Multiply e^alpha into the weights of misclassified examples only."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    w = np.asarray(w, dtype=np.float64)
    new_w = w.copy()
    wrong = np.asarray(predictions) != np.asarray(labels)
    new_w[wrong] *= np.exp(alpha)
    if not np.isfinite(new_w).all():
        raise BoostingError(
            "weight update overflowed; use fewer rounds or revisit the err clamp"
        )
    return new_w


# ----------------------------------------------------------------------
# learner protocol and ensemble containers
# ----------------------------------------------------------------------

class RoundModel(Protocol):
    def predict_proba(self, dataset) -> np.ndarray: ...


@dataclass
class BoostRound:
    """One accepted boosting round."""

    index: int
    model: object  # RoundModel
    alpha: float
    err: float
    train_predictions: np.ndarray


@dataclass
class BoostEnsemble:
    K: int
    learner_kind: str
    sharing_mode: str
    rounds: list[BoostRound]
    shared_trunk: Optional[enc.ModelSnapshot] = None

    def __post_init__(self) -> None:
        if not self.rounds:
            raise ValueError("ensemble must contain at least one round")
        if self.sharing_mode not in SHARING_MODES:
            raise ValueError(f"sharing_mode must be one of {SHARING_MODES}")

    @property
    def m_effective(self) -> int:
        return len(self.rounds)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.rounds], dtype=np.float64)

    def predict_proba_per_round(self, dataset) -> np.ndarray:
        """(n, M, K) eval-mode softmax rows for every round."""
        per_round = [r.model.predict_proba(dataset) for r in self.rounds]
        return np.stack(per_round, axis=1)

    def vote_scores(self, dataset, mode: str = "soft") -> np.ndarray:
        """Alpha-weighted scores: soft sums alpha * p, discrete sums
        alpha * one_hot(argmax p)."""
        probs = self.predict_proba_per_round(dataset)  # (n, M, K)
        if mode == "soft":
            contrib = probs
        elif mode == "discrete":
            contrib = np.zeros_like(probs)
            n, m, _ = probs.shape
            hard = probs.argmax(axis=2)
            contrib[np.arange(n)[:, None], np.arange(m)[None, :], hard] = 1.0
        else:
            raise ValueError(f"unknown vote mode {mode!r}")
        return (self.alphas[None, :, None] * contrib).sum(axis=1)

    def params_digest(self) -> str:
        """Digest over all frozen base parameters (frozen-base contract)."""
        import hashlib

        h = hashlib.sha256()
        if self.shared_trunk is not None:
            h.update(self.shared_trunk.params.tobytes())
        for r in self.rounds:
            h.update(_round_payload_bytes(r.model))
        return h.hexdigest()

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256(ensemble_to_bytes(self)).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(ensemble_to_bytes(self))

    @classmethod
    def load(cls, path: str | Path) -> "BoostEnsemble":
        return ensemble_from_bytes(Path(path).read_bytes())


def vote_predict(ensemble: BoostEnsemble, dataset, mode: str = "soft"):
    """(label ids, score vectors); argmax ties break to the lowest index."""
    scores = ensemble.vote_scores(dataset, mode=mode)
    return scores.argmax(axis=1), scores


# ----------------------------------------------------------------------
# the boosting loop
# ----------------------------------------------------------------------

def boost_train(
    dataset,
    learner,
    rounds: int,
    seed: int,
    *,
    dev: Optional[object] = None,
    record_weights: bool = False,
) -> tuple[BoostEnsemble, list[dict]]:
    """Run the boosting loop for up to ``rounds`` rounds.

    ``learner`` supplies ``fit_round(m, dataset, weights, seed)`` returning a
    round model with eval-mode ``predict_proba``, plus ``kind``,
    ``sharing_mode`` and an optional ``finalize(rounds)`` hook (used by
    weight sharing to re-bind heads to the final trunk).

    Returns the ensemble and one log record per round:
    {m, err, alpha, train_acc, dev_acc, weight_sum} (+ ``weights_after``
    when ``record_weights``). Raises BoostingError if no round beats chance.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    labels = dataset.labels
    n = labels.shape[0]
    K = dataset.K
    w = init_weights_uniform(n)
    kept: list[BoostRound] = []
    log: list[dict] = []
    for m in range(1, rounds + 1):
        model = learner.fit_round(m, dataset, w, seed)
        probs = model.predict_proba(dataset)
        preds = probs.argmax(axis=1)
        err = weighted_error(preds, labels, w)
        alpha = compute_alpha(err, K)
        if alpha <= 0.0:
            log.append({
                "m": m, "err": err, "alpha": alpha, "train_acc": None,
                "dev_acc": None, "weight_sum": float(w.sum()), "event": "discarded",
            })
            break
        w_next = update_weights(w, preds, labels, alpha)
        _check_weight_update(w, w_next, preds, labels, alpha)
        kept.append(BoostRound(index=m, model=model, alpha=alpha, err=err,
                               train_predictions=preds))
        entry = {
            "m": m,
            "err": err,
            "alpha": alpha,
            "train_acc": float((preds == labels).mean() * 100.0),
            "dev_acc": _dev_accuracy(model, dev),
            "weight_sum": float(w_next.sum()),
        }
        if record_weights:
            entry["weights_after"] = w_next.copy()
        log.append(entry)
        w = w_next
    if not kept:
        raise BoostingError("no base learner beat chance")
    finalize = getattr(learner, "finalize", None)
    if finalize is not None:
        kept = finalize(kept)
    ensemble = BoostEnsemble(
        K=K,
        learner_kind=learner.kind,
        sharing_mode=getattr(learner, "sharing_mode", "privacy"),
        rounds=kept,
        shared_trunk=getattr(learner, "final_trunk", None),
    )
    return ensemble, log


def _check_weight_update(w, w_next, preds, labels, alpha) -> None:
    """Invariants of step 2.5, verified every round of every run."""
    wrong = preds != labels
    expected = np.sum(w[~wrong]) + np.exp(alpha) * np.sum(w[wrong])
    total = w_next.sum()
    if not np.isclose(total, expected, rtol=1e-12, atol=0.0):
        raise AssertionError("weight-update law violated")
    if alpha > 0.0 and wrong.any() and not wrong.all():
        before = np.sum(w[wrong]) / np.sum(w)
        after = np.sum(w_next[wrong]) / total
        if not after > before:
            raise AssertionError("misclassified weight mass did not increase")


def _dev_accuracy(model, dev) -> Optional[float]:
    if dev is None:
        return None
    probs = model.predict_proba(dev)
    return float((probs.argmax(axis=1) == dev.labels).mean() * 100.0)


# ----------------------------------------------------------------------
# neural learners
# ----------------------------------------------------------------------

def _round_seed(seed: int, m: int, tag: int) -> list[int]:
    return [int(seed), int(m), int(tag)]


@dataclass
class NeuralRoundModel:
    """Privacy-mode round model: a full frozen snapshot."""

    snapshot: enc.ModelSnapshot

    def predict_proba(self, dataset) -> np.ndarray:
        model = enc.model_from_snapshot(self.snapshot)
        return model.predict_proba(dataset.packed)


@dataclass
class SharedHeadRoundModel:
    """Sharing-mode round model: a private head bound to some trunk."""

    head: np.ndarray  # concatenated cls.w | cls.b
    trunk: enc.ModelSnapshot

    def bound_snapshot(self) -> enc.ModelSnapshot:
        layout = self.trunk.layout
        params = np.array(self.trunk.params, copy=True)
        w_sl = layout.slice_of("cls.w")
        b_sl = layout.slice_of("cls.b")
        params[w_sl] = self.head[: w_sl.stop - w_sl.start]
        params[b_sl] = self.head[w_sl.stop - w_sl.start :]
        return enc.ModelSnapshot(config=self.trunk.config, params=params, role=self.trunk.role)

    def predict_proba(self, dataset) -> np.ndarray:
        model = enc.model_from_snapshot(self.bound_snapshot())
        return model.predict_proba(dataset.packed)


def _extract_head(snapshot: enc.ModelSnapshot) -> np.ndarray:
    layout = snapshot.layout
    w_sl = layout.slice_of("cls.w")
    b_sl = layout.slice_of("cls.b")
    return np.concatenate([snapshot.params[w_sl], snapshot.params[b_sl]])


class NeuralBoostLearner:
    """Fits one transformer or softreg base classifier per round.

    In privacy mode every round owns its full parameter set; in sharing
    mode a single trunk is carried across rounds and every round trains the
    trunk plus a freshly drawn private head.
    """

    def __init__(
        self,
        config,
        train_cfg: enc.TrainConfig,
        init_strategy: "str | enc.InitStrategy" = "pretrained",
        *,
        sharing_mode: str = "privacy",
        pretrained: Optional[enc.ModelSnapshot] = None,
    ):
        self.config = config
        self.train_cfg = train_cfg
        self.init_strategy = enc.InitStrategy(init_strategy)
        self.sharing_mode = sharing_mode
        self.pretrained = pretrained
        self.kind = config.kind
        if sharing_mode not in SHARING_MODES:
            raise ValueError(f"sharing_mode must be one of {SHARING_MODES}")
        if sharing_mode == "sharing" and self.kind != "transformer":
            raise ValueError("weight sharing requires the transformer learner")
        if self.kind != "transformer" and self.init_strategy in (
            enc.InitStrategy.PRETRAINED,
            enc.InitStrategy.INCREMENTAL,
        ):
            raise ValueError(
                f"{self.init_strategy.value} initialization requires the transformer learner"
            )
        self._previous: Optional[enc.ModelSnapshot] = None
        self._task_finetuned: Optional[enc.ModelSnapshot] = None
        self._trunk_params: Optional[np.ndarray] = None
        self.final_trunk: Optional[enc.ModelSnapshot] = None
        # round-1 model as it stood at train time; the single-model baseline
        self.round1_snapshot: Optional[enc.ModelSnapshot] = None
        # per-round step logs ({step, loss, lr} records from the optimizer)
        self.train_logs: list[list[dict]] = []

    # -- initialization ------------------------------------------------
    def _init_snapshot(self, m: int, dataset, seed) -> enc.ModelSnapshot:
        ctx = enc.InitContext(
            config=self.config,
            seed=_round_seed(seed, m, 1),
            pretrained=self.pretrained,
            task_finetuned=self._task_finetuned,
            previous_round=self._previous,
            round_index=m,
        )
        if self.init_strategy is enc.InitStrategy.FINETUNING and self._task_finetuned is None:
            self._task_finetuned = self._fit_uniform_source(dataset, seed)
            ctx.task_finetuned = self._task_finetuned
        return enc.init_weights(self.init_strategy, ctx)

    def _fit_uniform_source(self, dataset, seed) -> enc.ModelSnapshot:
        """One unweighted fine-tune, produced once before boosting."""
        if self.kind == "transformer" and self.pretrained is not None:
            ctx = enc.InitContext(
                config=self.config, seed=_round_seed(seed, 0, 2), pretrained=self.pretrained
            )
            start = enc.init_weights(enc.InitStrategy.PRETRAINED, ctx)
        else:
            start = enc.new_model(self.config, seed=_round_seed(seed, 0, 2)).snapshot("random")
        model = enc.model_from_snapshot(start)
        snap, _ = enc.train(
            model, dataset, self.train_cfg, _round_seed(seed, 0, 3),
            weights=np.ones(dataset.n, dtype=np.float64),
        )
        return snap

    # -- per-round fitting ----------------------------------------------
    def fit_round(self, m: int, dataset, weights: np.ndarray, seed):
        if self.sharing_mode == "privacy":
            start = self._init_snapshot(m, dataset, seed)
            model = enc.model_from_snapshot(start)
            snap, tlog = enc.train(
                model, dataset, self.train_cfg, _round_seed(seed, m, 4), weights=weights
            )
            self._previous = snap
            self.train_logs.append(tlog)
            if m == 1:
                self.round1_snapshot = snap
            return NeuralRoundModel(snapshot=snap)

        # sharing: trunk continues, head is redrawn each round
        if self._trunk_params is None:
            start = self._init_snapshot(1, dataset, seed)
            self._trunk_params = np.array(start.params, copy=True)
        model = enc.TransformerModel(self.config, params=self._trunk_params)
        rng = np.random.default_rng(_round_seed(seed, m, 5))
        lim = enc.xavier_limit(self.config.d_model, self.config.K)
        model.p["cls.w"][:] = rng.uniform(-lim, lim, size=model.p["cls.w"].shape)
        model.p["cls.b"][:] = 0.0
        snap, tlog = enc.train(
            model, dataset, self.train_cfg, _round_seed(seed, m, 4), weights=weights
        )
        self._trunk_params = np.array(snap.params, copy=True)
        self.train_logs.append(tlog)
        if m == 1:
            self.round1_snapshot = snap
        return SharedHeadRoundModel(head=_extract_head(snap), trunk=snap)

    def finalize(self, rounds: list[BoostRound]) -> list[BoostRound]:
        if self.sharing_mode == "privacy":
            return rounds
        trunk = rounds[-1].model.trunk
        self.final_trunk = trunk
        for r in rounds:
            r.model = SharedHeadRoundModel(head=r.model.head, trunk=trunk)
        return rounds


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def _round_payload_bytes(model) -> bytes:
    if isinstance(model, NeuralRoundModel):
        return model.snapshot.params.tobytes()
    if isinstance(model, SharedHeadRoundModel):
        return model.head.tobytes()
    # stump payloads serialize through their dict form
    return json.dumps(model.to_dict(), sort_keys=True).encode()


def ensemble_to_bytes(ensemble: BoostEnsemble) -> bytes:
    header: dict = {
        "K": ensemble.K,
        "learner_kind": ensemble.learner_kind,
        "sharing_mode": ensemble.sharing_mode,
        "m_effective": ensemble.m_effective,
        "rounds": [
            {"index": r.index, "alpha": r.alpha, "err": r.err} for r in ensemble.rounds
        ],
    }
    blobs: list[bytes] = []
    if ensemble.learner_kind == "stump":
        header["stumps"] = [r.model.to_dict() for r in ensemble.rounds]
    elif ensemble.sharing_mode == "sharing":
        blobs.append(ensemble.shared_trunk.to_bytes())
        for r in ensemble.rounds:
            blobs.append(r.model.head.astype("<f8").tobytes())
    else:
        for r in ensemble.rounds:
            blobs.append(r.model.snapshot.to_bytes())
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = [ENSEMBLE_MAGIC, struct.pack("<I", len(hbytes)), hbytes, struct.pack("<I", len(blobs))]
    for b in blobs:
        out.append(struct.pack("<Q", len(b)))
        out.append(b)
    return b"".join(out)


def ensemble_from_bytes(blob: bytes) -> BoostEnsemble:
    if blob[:4] != ENSEMBLE_MAGIC:
        raise ValueError("bad ensemble magic (expected BGE1)")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + hlen].decode())
    pos = 8 + hlen
    (n_blobs,) = struct.unpack("<I", blob[pos : pos + 4])
    pos += 4
    blobs: list[bytes] = []
    for _ in range(n_blobs):
        (size,) = struct.unpack("<Q", blob[pos : pos + 8])
        pos += 8
        blobs.append(blob[pos : pos + size])
        pos += size

    kind = header["learner_kind"]
    meta = header["rounds"]
    rounds: list[BoostRound] = []
    shared_trunk = None
    if kind == "stump":
        from .baselines import Stump, StumpRoundModel

        for rm, sd in zip(meta, header["stumps"]):
            rounds.append(BoostRound(
                index=rm["index"],
                model=StumpRoundModel(stump=Stump.from_dict(sd), K=header["K"]),
                alpha=rm["alpha"], err=rm["err"], train_predictions=np.array([]),
            ))
    elif header["sharing_mode"] == "sharing":
        shared_trunk = enc.ModelSnapshot.from_bytes(blobs[0])
        for rm, hb in zip(meta, blobs[1:]):
            head = np.frombuffer(hb, dtype="<f8").astype(np.float64)
            rounds.append(BoostRound(
                index=rm["index"], model=SharedHeadRoundModel(head=head, trunk=shared_trunk),
                alpha=rm["alpha"], err=rm["err"], train_predictions=np.array([]),
            ))
    else:
        for rm, sb in zip(meta, blobs):
            rounds.append(BoostRound(
                index=rm["index"], model=NeuralRoundModel(enc.ModelSnapshot.from_bytes(sb)),
                alpha=rm["alpha"], err=rm["err"], train_predictions=np.array([]),
            ))
    return BoostEnsemble(
        K=header["K"],
        learner_kind=kind,
        sharing_mode=header["sharing_mode"],
        rounds=rounds,
        shared_trunk=shared_trunk,
    )
