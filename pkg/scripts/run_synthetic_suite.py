#!/usr/bin/env python3
"""End-to-end experiment driver on the bundled synthetic task.

Generates the data, trains the boosted ensemble with its fusion head,
trains the bagging baseline, distills the ensemble into a student, and
prints the collected dev accuracies. Everything lands under --workdir.
"""

import argparse
import json
import sys
from pathlib import Path

from textboost import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/synthetic-suite")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--task-seed", type=int, default=2024)
    ap.add_argument("--train-size", type=int, default=2000)
    ap.add_argument("--rounds", type=int, default=6)
    args = ap.parse_args()

    work = Path(args.workdir)
    task = work / "task"
    out = work / "runs"
    rc = cli.main([
        "gen-data", "--out", str(task), "--seed", str(args.task_seed),
        "--train-size", str(args.train_size),
    ])
    if rc != 0:
        return rc

    config = {
        "seed": args.seed,
        "train_path": str(task / "train.tsv"),
        "dev_path": str(task / "dev.tsv"),
        "corpus_path": str(task / "corpus.txt"),
        "boost": {"rounds": args.rounds},
        "out_dir": str(out),
    }
    cfg_path = work / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2), encoding="utf-8")

    for argv in (
        ["train-boost", "--config", str(cfg_path)],
        ["train-bag", "--config", str(cfg_path)],
    ):
        rc = cli.main(argv)
        if rc != 0:
            return rc

    boost_dir = next(p for p in out.iterdir() if p.name.startswith("train-boost-"))
    rc = cli.main(["distill", "--teacher-dir", str(boost_dir), "--config", str(cfg_path)])
    if rc != 0:
        return rc

    print("\n== summary (dev accuracy, %) ==")
    for rec_path in sorted(out.glob("*/metrics.json")):
        rec = json.loads(rec_path.read_text())
        shown = {k: round(v, 2) for k, v in rec["accuracies"].items() if v is not None}
        print(f"{rec['command']:12s} {shown}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
