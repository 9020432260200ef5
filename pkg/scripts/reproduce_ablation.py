#!/usr/bin/env python3
"""End-to-end reproduction of the planner/controller ablation table.

Collects the dataset, trains the contrastive encoder and the autoencoder
baseline, evaluates the full 7-cell matrix with paired seeds, and writes
metrics.csv / metrics_full.csv / manifest.json plus per-cell episode logs.

Artifacts are cached under --workdir; delete the directory (or pass
--force) to rebuild from scratch.
"""

import argparse
import os
import sys
import time

from slackline.cli import main as cli_main


def step(argv: list[str]) -> None:
    print(f"$ slackline {' '.join(argv)}", flush=True)
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="artifacts")
    parser.add_argument("--episodes", type=int, default=1000,
                        help="dataset size to collect")
    parser.add_argument("--eval-episodes", type=int, default=300,
                        help="episodes per matrix cell")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    parser.add_argument("--config", default=None)
    parser.add_argument("--force", action="store_true")
    args = parser.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    dataset = os.path.join(args.workdir, "dataset.jsonl")
    encoder = os.path.join(args.workdir, "encoder.bin")
    ae = os.path.join(args.workdir, "autoencoder.bin")
    report = os.path.join(args.workdir, "ablation")
    cfg = ["--config", args.config] if args.config else []

    t0 = time.perf_counter()
    if args.force or not os.path.exists(dataset):
        step(["collect", "--out", dataset, "--episodes", str(args.episodes),
              "--seed", str(args.seed), *cfg])
    if args.force or not os.path.exists(encoder):
        step(["train", "--dataset", dataset, "--out", encoder,
              "--seed", str(args.seed), *cfg])
    if args.force or not os.path.exists(ae):
        step(["train-ae", "--dataset", dataset, "--out", ae,
              "--seed", str(args.seed), *cfg])
    step([
        "eval", "--dataset", dataset, "--encoder", encoder,
        "--autoencoder", ae, "--matrix", "full",
        "--episodes", str(args.eval_episodes), "--seed", str(args.seed),
        "--out", report, "--workers", str(args.workers), *cfg,
    ])
    print(f"total {time.perf_counter() - t0:.0f}s; report in {report}/")


if __name__ == "__main__":
    main()
