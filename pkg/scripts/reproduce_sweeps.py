#!/usr/bin/env python3
"""Constraint sweeps: success rate of the default policy as the arm reach
limit grows and as the obstacle radius grows.

Requires the dataset and encoder produced by reproduce_ablation.py (or the
equivalent CLI calls); writes one CSV + SVG chart per sweep.
"""

import argparse
import os
import sys

from slackline.cli import main as cli_main

REACH_VALUES = "0.35,0.40,0.45,0.50,0.55"
RADIUS_VALUES = "0.02,0.03,0.04,0.05,0.06"


def step(argv: list[str]) -> None:
    print(f"$ slackline {' '.join(argv)}", flush=True)
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="artifacts")
    parser.add_argument("--episodes", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    parser.add_argument("--config", default=None)
    args = parser.parse_args()

    dataset = os.path.join(args.workdir, "dataset.jsonl")
    encoder = os.path.join(args.workdir, "encoder.bin")
    cfg = ["--config", args.config] if args.config else []
    for param, values in (("reach_max", REACH_VALUES),
                          ("obstacle_radius", RADIUS_VALUES)):
        step([
            "sweep", "--dataset", dataset, "--encoder", encoder,
            "--param", param, "--values", values,
            "--episodes", str(args.episodes), "--seed", str(args.seed),
            "--out", os.path.join(args.workdir, f"sweep_{param}"),
            "--workers", str(args.workers), *cfg,
        ])


if __name__ == "__main__":
    main()
