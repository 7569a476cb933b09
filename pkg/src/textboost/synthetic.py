"""Bundled synthetic 3-class text task so experiments need no external data.

Every sentence draws its filler words from one of six topics (plus a shared
pool); topics are deliberately orthogonal to the class label, so masked-token
pretraining can organize the large filler vocabulary without leaking labels.
The class signal lives only in keywords: easy sentences carry one or two
frequent ("strong") keywords of their class, often alongside one of the
class's infrequent ("rare") keywords; hard sentences carry a single rare
keyword of the true class plus a strong keyword of another class as a decoy,
so a model that stops at the frequent evidence misreads them. A label-noise
knob flips a fraction of training labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .textdata import RawExample

LABELS = ("alpha", "beta", "gamma")

# the filler inventory is deliberately large: learning these embeddings from
# the labeled split alone is slow, while the unlabeled corpus covers them
# densely, which is what makes warm starts matter at toy scale
_N_TOPICS = 6
_TOPIC = tuple(tuple(f"t{c}{i:03d}" for i in range(75)) for c in range(_N_TOPICS))
_SHARED = tuple(f"s{i:03d}" for i in range(100))
_STRONG = tuple(tuple(f"k{c}{j}" for j in range(5)) for c in range(3))
_RARE = tuple(tuple(f"r{c}{j}" for j in range(6)) for c in range(3))

_RARE_IN_EASY_PROB = 0.35
_TOPIC_WORD_PROB = 0.6


@dataclass(frozen=True)
class SynthConfig:
    train_size: int = 2000
    dev_size: int = 600
    corpus_size: int = 6000
    noise: float = 0.03
    hard_fraction: float = 0.25
    decoys_per_hard: int = 1
    seed: int = 0


def _fillers(rng: np.random.Generator, n: int) -> list[str]:
    topic = _TOPIC[int(rng.integers(_N_TOPICS))]
    words = []
    for _ in range(n):
        pool = topic if rng.random() < _TOPIC_WORD_PROB else _SHARED
        words.append(pool[int(rng.integers(len(pool)))])
    return words


def _sentence(rng: np.random.Generator, cls: int, hard: bool, decoys: int) -> str:
    words = _fillers(rng, int(rng.integers(5, 11)))
    if hard:
        words.append(_RARE[cls][int(rng.integers(len(_RARE[cls])))])
        others = [c for c in range(3) if c != cls]
        for _ in range(decoys):
            oc = others[int(rng.integers(len(others)))]
            words.append(_STRONG[oc][int(rng.integers(len(_STRONG[oc])))])
    else:
        for _ in range(int(rng.integers(1, 3))):
            words.append(_STRONG[cls][int(rng.integers(len(_STRONG[cls])))])
        if rng.random() < _RARE_IN_EASY_PROB:
            words.append(_RARE[cls][int(rng.integers(len(_RARE[cls])))])
    rng.shuffle(words)
    return " ".join(words)


def generate_examples(
    n: int, seed, *, noise: float = 0.0, hard_fraction: float = 0.25, decoys_per_hard: int = 1
) -> list[RawExample]:
    rng = np.random.default_rng(seed)
    out: list[RawExample] = []
    for _ in range(n):
        cls = int(rng.integers(3))
        hard = bool(rng.random() < hard_fraction)
        text = _sentence(rng, cls, hard, decoys_per_hard)
        label = cls
        if noise > 0 and rng.random() < noise:
            label = (cls + 1 + int(rng.integers(2))) % 3
        out.append(RawExample(label=LABELS[label], text_a=text))
    return out


def generate_corpus(
    n: int, seed, *, hard_fraction: float = 0.25, decoys_per_hard: int = 1
) -> list[str]:
    """Unlabeled sentences from the same distribution, for MLM pretraining."""
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(n):
        cls = int(rng.integers(3))
        hard = bool(rng.random() < hard_fraction)
        lines.append(_sentence(rng, cls, hard, decoys_per_hard))
    return lines


def write_task(out_dir: str | Path, cfg: SynthConfig) -> dict:
    """Write train.tsv (noisy), dev.tsv (clean), and corpus.txt; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = generate_examples(
        cfg.train_size, [cfg.seed, 1], noise=cfg.noise,
        hard_fraction=cfg.hard_fraction, decoys_per_hard=cfg.decoys_per_hard,
    )
    dev = generate_examples(
        cfg.dev_size, [cfg.seed, 2], noise=0.0,
        hard_fraction=cfg.hard_fraction, decoys_per_hard=cfg.decoys_per_hard,
    )
    corpus = generate_corpus(
        cfg.corpus_size, [cfg.seed, 3],
        hard_fraction=cfg.hard_fraction, decoys_per_hard=cfg.decoys_per_hard,
    )
    paths = {
        "train": out / "train.tsv",
        "dev": out / "dev.tsv",
        "corpus": out / "corpus.txt",
    }
    _write_tsv(paths["train"], train)
    _write_tsv(paths["dev"], dev)
    paths["corpus"].write_text("\n".join(corpus) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def _write_tsv(path: Path, examples: Sequence[RawExample]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(f"{ex.label}\t{ex.text_a}\n")
