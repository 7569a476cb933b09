#!/usr/bin/env python3
"""Data-fraction sweep: how much does boosting add as labels get scarce?

Trains the single baseline and the boosted ensemble on stratified
subsamples of the synthetic training split and reports the gain per
fraction (the vocabulary and masked-token pretraining stay fixed, like a
pretrained tokenizer would).
"""

import argparse
import json
import sys
from pathlib import Path

from textboost import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/fractions")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--task-seed", type=int, default=2024)
    ap.add_argument("--fractions", default="0.05,0.2,1.0")
    args = ap.parse_args()

    work = Path(args.workdir)
    task = work / "task"
    out = work / "runs"
    rc = cli.main(["gen-data", "--out", str(task), "--seed", str(args.task_seed)])
    if rc != 0:
        return rc

    cfg_path = work / "config.json"
    cfg_path.write_text(json.dumps({
        "seed": args.seed,
        "train_path": str(task / "train.tsv"),
        "dev_path": str(task / "dev.tsv"),
        "corpus_path": str(task / "corpus.txt"),
        "out_dir": str(out),
    }, indent=2), encoding="utf-8")

    return cli.main(["fractions", "--config", str(cfg_path), "--fractions", args.fractions])


if __name__ == "__main__":
    sys.exit(main())
