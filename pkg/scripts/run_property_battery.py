"""Property battery over generated games plus the sampled-Shapley error study.

The battery is the ``check`` command; the study reports how the mean
absolute error of permutation-sampled tables shrinks with M.
"""

import argparse
from pathlib import Path

import numpy as np

from shaqlab import cli, shapley
from shaqlab.game import all_coalition_values, generate_convex_game


def sampling_study(n_agents: int, Ms, reseeds: int, seed: int):
    game = generate_convex_game(n_agents, 2, 2, seed=seed)
    values = all_coalition_values(game)
    exact = shapley.markov_shapley_table_exact(game, values=values)
    rows = []
    for M in Ms:
        errs = []
        for s in range(reseeds):
            table = shapley.markov_shapley_table_sampled(game, M, s, values=values)
            errs.append(np.mean([np.abs(a - b).mean() for a, b in zip(table.q_phi, exact.q_phi)]))
        rows.append((M, float(np.mean(errs)), float(np.std(errs))))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(Path(__file__).resolve().parent / "configs" / "check.json"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/check")
    parser.add_argument("--study-agents", type=int, default=4)
    parser.add_argument("--reseeds", type=int, default=200)
    args = parser.parse_args()

    code = cli.main(["check", "--config", args.config, "--seed", str(args.seed), "--out", args.out])
    print("\nM     mean abs error   std")
    for M, mean, std in sampling_study(args.study_agents, (1, 10, 100), args.reseeds, args.seed):
        print(f"{M:<5d} {mean:<16.5f} {std:.5f}")
    raise SystemExit(code)


if __name__ == "__main__":
    main()
