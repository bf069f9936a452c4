"""Command-line harness: Shapley tables, operator iteration, training and property batteries.

Every command reads an optional JSON config (with a ``command`` field that
must match the subcommand), applies flag overrides, and writes artifacts
that embed the config hash. Exit codes: 0 all checks pass, 1 property
violation, 2 configuration error.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import functools
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bellman, game as mcg, learner as lrn, shapley
from .envs import make_env

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON config; the output directory is excluded."""
    body = {k: v for k, v in config.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, shapley.CheckResult):
        return {"passed": bool(x.passed), "detail": _jsonable(x.detail)}
    if isinstance(x, mcg.ConvexityReport):
        return {"passed": bool(x.passed), "violation": _jsonable(x.violation)}
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def load_config(args) -> dict:
    """Merge the JSON config file (if any) with command-line overrides."""
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    command = cfg.setdefault("command", args.command)
    if command != args.command:
        raise ConfigError(f"config is for {command!r}, not {args.command!r}")
    for key in ("seed", "out", "M", "tol", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if args.seeds is not None:
        cfg["seeds"] = args.seeds
    if args.algo is not None:
        cfg.setdefault("learner", {})["algo"] = args.algo
    if getattr(args, "inject_fault", False):
        cfg["inject_fault"] = True
    if getattr(args, "compare_oracle", False):
        cfg["compare_oracle"] = True
    if getattr(args, "max_agents", None) is not None:
        cfg["max_agents"] = args.max_agents
    cfg.setdefault("out", f"runs/{args.command}")
    return cfg


def load_game(cfg: dict) -> mcg.MarkovConvexGame:
    """Game from ``game`` (path), ``generator`` (dict) or ``fixture`` (name), with optional edits."""
    try:
        if "game" in cfg:
            game = mcg.MarkovConvexGame.load(cfg["game"])
        elif "fixture" in cfg:
            fixtures = {"non_convex": mcg.non_convex_fixture, "glove": mcg.glove_game}
            if cfg["fixture"] not in fixtures:
                raise ConfigError(f"unknown fixture {cfg['fixture']!r}")
            game = fixtures[cfg["fixture"]]()
        else:
            gen = {"n_agents": 3, "n_states": 3, "n_actions": 2, "seed": cfg.get("seed", 0), **cfg.get("generator", {})}
            game = mcg.generate_convex_game(**gen)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot build game: {exc}") from exc
    if cfg.get("append_dummy"):
        game = mcg.append_dummy(game)
    if "symmetrize" in cfg:
        game = mcg.symmetrize(game, *cfg["symmetrize"])
    problems = mcg.validate_game(game)
    if problems:
        raise ConfigError("invalid game: " + "; ".join(problems))
    return game


def cmd_shapley(cfg: dict) -> int:
    game = load_game(cfg)
    out = Path(cfg["out"])
    tol = cfg.get("tol", 1e-6)
    mode = cfg.get("mode", "exact")
    if mode not in ("exact", "sampled", "both"):
        raise ConfigError(f"unknown mode {mode!r}")
    values = mcg.all_coalition_values(game)
    exact = shapley.markov_shapley_table_exact(game, values=values)
    meta = {"config_hash": config_hash(cfg), "seed": cfg.get("seed")}
    write_json(out / "shapley_exact.json", {**meta, **exact.to_json()})
    if mode in ("sampled", "both"):
        M = int(cfg.get("M", 10))
        sampled = shapley.markov_shapley_table_sampled(game, M, cfg.get("seed", 0), values=values)
        write_json(out / "shapley_sampled.json", {**meta, **sampled.to_json()})
    checked = exact.perturbed(0, 0, 1.0) if cfg.get("inject_fault") else exact
    report = shapley.shapley_report(game, checked, tol, values)
    passed = all(bool(r) for r in report.values())
    write_json(out / "shapley_report.json", {**meta, "passed": passed, "checks": report})
    _print_checks(report)
    return EXIT_OK if passed else EXIT_VIOLATION


def _weight_spec(cfg: dict, game) -> bellman.WeightSpec:
    spec = cfg.get("weights", "uniform")
    if spec == "uniform":
        return bellman.WeightSpec.uniform(game)
    try:
        w = tuple(np.array(x, dtype=float) for x in spec["w"])
        b = np.array(spec.get("b", np.zeros((game.n_agents, game.n_states))), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad weight spec: {exc}") from exc
    return bellman.WeightSpec(w, b)


def cmd_iterate(cfg: dict) -> int:
    game = load_game(cfg)
    out = Path(cfg["out"])
    spec = _weight_spec(cfg, game)
    q0 = bellman.FactoredQ.full(game, cfg.get("init", 0.0))
    try:
        check = bellman.check_weight_spec(spec, game, q0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not check.detail["positive_w"] or not check.detail["contraction"]:
        raise ConfigError(f"weight spec rejected: {json.dumps(_jsonable(check.detail), sort_keys=True)}")
    result = bellman.fixed_point_iterate(spec, game, cfg.get("tol", 1e-8), cfg.get("max_iter", 100_000), q0)
    oracle = mcg.joint_value_iteration(game)
    gap = np.abs(result.q.max_sum() - oracle.v_star)
    meta = {"config_hash": config_hash(cfg), "seed": cfg.get("seed")}
    write_json(out / "fixed_point.json", {**meta, "q": result.q.to_json(), "iterations": len(result.trace),
                                          "contraction_factor": result.contraction_factor,
                                          "efficiency_gap": gap, "weight_check": check})
    result.write_trace(out / "trace.csv")
    print(f"iterations {len(result.trace)}  contraction factor {result.contraction_factor:.6g}")
    if cfg.get("compare_oracle"):
        print(f"efficiency gap vs joint oracle: {gap.max():.3e}")
        return EXIT_OK if gap.max() <= cfg.get("oracle_tol", 1e-5) else EXIT_VIOLATION
    return EXIT_OK


def _train_one(env_spec: dict, learner_cfg: dict, seed: int, credit_episodes: int):
    config = lrn.LearnerConfig(**learner_cfg)
    learner, record = lrn.run_seed(functools.partial(make_env, env_spec), config, seed)
    credit_env = make_env(env_spec, np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3]))
    credit = lrn.credit_report(learner, credit_env, credit_episodes)
    return learner.to_json(), record, credit


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SHAQLAB_THREADS", "1")))
    except ValueError as exc:
        raise ConfigError("SHAQLAB_THREADS must be an integer") from exc


def aggregate(records, seeds) -> list[dict]:
    """Median and quartiles of the evaluation return across seeds at each evaluation index."""
    n = min(len(r.rows) for r in records)
    rows = []
    for k in range(n):
        vals = np.array([r.rows[k]["eval_median_return"] for r in records])
        row = {"step": int(records[0].rows[k]["step"])}
        row.update({f"seed_{s}": float(v) for s, v in zip(seeds, vals)})
        q25, med, q75 = np.percentile(vals, [25, 50, 75])
        row.update(median=float(med), q25=float(q25), q75=float(q75))
        rows.append(row)
    return rows


def cmd_train(cfg: dict) -> int:
    env_spec = cfg.get("env", {"type": "matrix", "payoff": [[12, 6], [7, 0]]})
    learner_cfg = dict(cfg.get("learner", {}))
    if "M" in cfg:
        learner_cfg["sample_size"] = int(cfg["M"])
    seeds = cfg.get("seeds", [cfg.get("seed", 0)])
    try:
        lrn.LearnerConfig(**learner_cfg)
        make_env(env_spec, np.random.default_rng(0))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg["out"])
    h = config_hash(cfg)
    jobs = [(env_spec, learner_cfg, s, int(cfg.get("credit_episodes", 1))) for s in seeds]
    workers = min(_threads(), len(seeds))
    if workers > 1:
        with cf.ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*j) for j in jobs]

    records = []
    for s, (checkpoint, record, credit) in zip(seeds, results):
        checkpoint["config_hash"] = h
        write_json(out / f"checkpoint_seed{s}.json", checkpoint)
        record.to_csv(out / f"train_seed{s}.csv")
        _write_rows(out / f"credit_seed{s}.csv", credit, ["episode", "t", "agent", "action", "q"])
        records.append(record)
    agg = aggregate(records, seeds)
    _write_rows(out / "curves.csv", agg, ["step", *(f"seed_{s}" for s in seeds), "median", "q25", "q75"])
    write_json(out / "record.json", {
        "config_hash": h,
        "seeds": seeds,
        "final": {str(s): r.final() for s, r in zip(seeds, records)},
        "aggregate": agg,
    })
    print(f"final median return {agg[-1]['median']:.4g} (q25 {agg[-1]['q25']:.4g}, q75 {agg[-1]['q75']:.4g})")
    return EXIT_OK


def _write_rows(path: Path, rows, columns) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def _print_checks(report: dict) -> None:
    for name, res in report.items():
        print(f"{'PASS' if bool(res) else 'FAIL'}  {name}")


def property_battery(n_games: int = 20, max_agents: int = 3, seed: int = 0, inject_fault: bool = False,
                     tol: float = 1e-6) -> dict:
    """Run every module invariant over generated games; returns name -> CheckResult."""
    rng = np.random.default_rng(seed)
    fails: dict[str, list] = {k: [] for k in ("convexity", "efficiency", "core", "dummy", "fairness",
                                               "permutation_equivalence", "contraction", "equal_credit",
                                               "non_convex_detected")}
    for g in range(n_games):
        n = int(rng.integers(2, max_agents + 1))
        game = mcg.generate_convex_game(n, int(rng.integers(1, 4)), int(rng.integers(2, 4)), seed=int(rng.integers(2**31)))
        values = mcg.all_coalition_values(game)
        table = shapley.markov_shapley_table_exact(game, values=values)
        if inject_fault:
            table = table.perturbed(0, 0, 10 * tol + 1e-3)
        if not mcg.check_convexity(game, values=values):
            fails["convexity"].append(g)
        if not shapley.check_efficiency(game, table, tol, values[game.grand_coalition]):
            fails["efficiency"].append(g)
        if not shapley.check_markov_core(game, table, tol, values):
            fails["core"].append(g)
        dgame = mcg.append_dummy(game)
        if not shapley.check_dummy(dgame, shapley.markov_shapley_table_exact(dgame), n):
            fails["dummy"].append(g)
        sgame = mcg.symmetrize(game, 0, 1)
        stable = shapley.markov_shapley_table_exact(sgame)
        if not shapley.check_fairness(sgame, stable, 1e-9, pairs=[(0, 1)]):
            fails["fairness"].append(g)
        perm = shapley.markov_shapley_table_sampled(game, 1, 0, values=values, exhaustive=True)
        if max(float(np.max(np.abs(a - b))) for a, b in zip(perm.q_phi, table.q_phi)) > 1e-9:
            fails["permutation_equivalence"].append(g)
        spec = bellman.WeightSpec.uniform(game)
        factor = spec.contraction_factor(game.gamma)
        for _ in range(10):
            q1, q2 = bellman.FactoredQ.random(game, rng), bellman.FactoredQ.random(game, rng)
            lhs = bellman.factored_norm(bellman.apply_operator(q1, spec, game) - bellman.apply_operator(q2, spec, game))
            if lhs > factor * bellman.factored_norm(q1 - q2) + 1e-10:
                fails["contraction"].append(g)
                break
        fp = bellman.fixed_point_iterate(spec, game).q
        if np.max(np.abs(fp.greedy_values() - values[game.grand_coalition].v_star / game.n_agents)) > 1e-5:
            fails["equal_credit"].append(g)
    nc = mcg.non_convex_fixture()
    if shapley.check_markov_core(nc, shapley.markov_shapley_table_exact(nc)):
        fails["non_convex_detected"].append("fixture")
    return {k: shapley.CheckResult(not v, {"failing_games": v}) for k, v in fails.items()}


def cmd_check(cfg: dict) -> int:
    report = property_battery(int(cfg.get("n_games", 20)), int(cfg.get("max_agents", 3)), int(cfg.get("seed", 0)),
                              bool(cfg.get("inject_fault", False)), float(cfg.get("tol", 1e-6)))
    passed = all(bool(r) for r in report.values())
    write_json(Path(cfg["out"]) / "check_report.json",
               {"config_hash": config_hash(cfg), "seed": cfg.get("seed", 0), "passed": passed, "checks": report})
    _print_checks(report)
    return EXIT_OK if passed else EXIT_VIOLATION


def cmd_check_convex(cfg: dict) -> int:
    game = load_game(cfg)
    report = mcg.check_convexity(game, cfg.get("tol", 1e-8))
    write_json(Path(cfg["out"]) / "convexity.json",
               {"config_hash": config_hash(cfg), "seed": cfg.get("seed"), "result": report})
    print("PASS  convexity" if report else f"FAIL  convexity {report.violation}")
    return EXIT_OK if report else EXIT_VIOLATION


def cmd_check_core(cfg: dict) -> int:
    game = load_game(cfg)
    if "table" in cfg:
        try:
            table = shapley.ShapleyTable.from_json(json.loads(Path(cfg["table"]).read_text()))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read table: {exc}") from exc
    else:
        table = shapley.markov_shapley_table_exact(game)
    result = shapley.check_markov_core(game, table, cfg.get("tol", 1e-6))
    write_json(Path(cfg["out"]) / "core.json",
               {"config_hash": config_hash(cfg), "seed": cfg.get("seed"), "result": result})
    print("PASS  core" if result else f"FAIL  core {result.detail}")
    return EXIT_OK if result else EXIT_VIOLATION


COMMANDS = {
    "shapley": cmd_shapley,
    "iterate": cmd_iterate,
    "train": cmd_train,
    "check": cmd_check,
    "check-convex": cmd_check_convex,
    "check-core": cmd_check_core,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shaqlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", type=_parse_seeds, help="comma-separated seed list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--M", type=int, help="number of sampled orderings")
        p.add_argument("--algo", choices=["shaq", "vdn"])
        p.add_argument("--tol", type=float)
        if name == "shapley":
            p.add_argument("--mode", choices=["exact", "sampled", "both"])
        if name in ("shapley", "check"):
            p.add_argument("--inject-fault", action="store_true", help="perturb one Shapley entry")
        if name == "iterate":
            p.add_argument("--compare-oracle", action="store_true")
        if name == "check":
            p.add_argument("--max-agents", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
