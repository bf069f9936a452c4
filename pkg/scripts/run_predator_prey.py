"""Train SHAQ (or VDN) on the 5x5 two-predator hunt and summarise the final evaluation."""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from shaqlab import cli

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(HERE / "configs" / "predator_prey.json"))
    parser.add_argument("--algo", choices=["shaq", "vdn"])
    parser.add_argument("--seeds")
    parser.add_argument("--out", default="runs/predator_prey")
    args = parser.parse_args()

    argv = ["train", "--config", args.config, "--out", args.out]
    if args.algo:
        argv += ["--algo", args.algo]
    if args.seeds:
        argv += ["--seeds", args.seeds]
    t0 = time.perf_counter()
    cli.main(argv)
    elapsed = time.perf_counter() - t0

    record = json.loads((Path(args.out) / "record.json").read_text())
    finals = record["final"]
    for seed, row in finals.items():
        print(f"seed {seed}: median return {row['eval_median_return']:.2f}, "
              f"both preys caught in {row['eval_solved_rate']:.0%} of greedy episodes")
    solved = np.median([r["eval_solved_rate"] for r in finals.values()])
    ret = np.median([r["eval_median_return"] for r in finals.values()])
    print(f"median seed: solved rate {solved:.3f}, return {ret:.2f}  ({elapsed / 60:.1f} min)")


if __name__ == "__main__":
    main()
