"""Train SHAQ and VDN on a one-shot cooperative matrix game and count optimal seeds.

Example:
    python scripts/run_matrix_game.py --out runs/matrix
    python scripts/run_matrix_game.py --config scripts/configs/climbing_shaq.json --algos shaq vdn
"""

import argparse
import json
from pathlib import Path

import numpy as np

from shaqlab import cli

HERE = Path(__file__).resolve().parent


def greedy_joint(checkpoint: Path) -> tuple[int, ...]:
    doc = json.loads(checkpoint.read_text())
    return tuple(int(np.argmax(t["0"])) for t in doc["q_tables"])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(HERE / "configs" / "matrix_shaq.json"))
    parser.add_argument("--algos", nargs="+", default=["shaq", "vdn"], choices=["shaq", "vdn"])
    parser.add_argument("--seeds", help="comma-separated seeds (default: from config)")
    parser.add_argument("--out", default="runs/matrix")
    args = parser.parse_args()

    cfg = json.loads(Path(args.config).read_text())
    payoff = np.array(cfg["env"]["payoff"])
    best = np.unravel_index(payoff.argmax(), payoff.shape)
    for algo in args.algos:
        out = Path(args.out) / algo
        argv = ["train", "--config", args.config, "--algo", algo, "--out", str(out)]
        if args.seeds:
            argv += ["--seeds", args.seeds]
        cli.main(argv)
        seeds = json.loads((out / "record.json").read_text())["seeds"]
        picks = [greedy_joint(out / f"checkpoint_seed{s}.json") for s in seeds]
        hits = sum(p == best for p in picks)
        print(f"{algo}: optimal joint action {tuple(int(b) for b in best)} in {hits}/{len(seeds)} seeds")
        for s, p in zip(seeds, picks):
            print(f"  seed {s}: greedy {p} -> payoff {payoff[p]:g}")


if __name__ == "__main__":
    main()
