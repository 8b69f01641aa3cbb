"""Command-line interface.

Every subcommand resolves its parameters, writes the declared artifacts into
--out, and drops a manifest.json echoing the resolved parameters and toolkit
version, so each output is reproducible byte-for-byte from its manifest.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, cliffs, directions, evaluation, nets, training
from .envs import ENV_NAMES, get_spec
from .evaluation import EvalBudget, GridSpec
from .rng import derive_seed

MANIFEST_SCHEMA = "manifest.v1"
SWEEP_INDEX_SCHEMA = "sweep-index.v1"


def _write_manifest(out_dir: Path, command: str, params: dict) -> None:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "version": __version__,
        "params": params,
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _arch_from_args(args, env_name: str) -> nets.Architecture:
    hidden = tuple(int(h) for h in args.hidden.split(","))
    return nets.arch_for_env(env_name, hidden_sizes=hidden, shared_trunk=not args.separate_towers)


def _train_config_from_args(args) -> training.TrainConfig:
    return training.TrainConfig(
        algo=args.algo,
        learning_rate=args.lr,
        n_steps=args.n_steps,
        total_steps=args.total_steps,
        checkpoint_interval=args.checkpoint_interval or args.total_steps,
        seed=args.seed,
        gamma=args.gamma,
        gae_lambda=args.gae_lambda,
        ppo_epochs=args.ppo_epochs,
        ppo_clip=args.ppo_clip,
        minibatch_count=args.minibatches,
        value_coef=args.value_coef,
        entropy_coef=args.entropy_coef,
        max_grad_norm=args.max_grad_norm,
    )


def cmd_train(args) -> int:
    out = _out_dir(args)
    arch = _arch_from_args(args, args.env)
    config = _train_config_from_args(args)
    training.train(args.env, arch, config, out, version=__version__)
    _write_manifest(out, "train", {"env": args.env, "architecture": arch.to_dict(),
                                   "config": config.to_dict()})
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    ckpt = nets.load_checkpoint(args.checkpoint)
    budget = EvalBudget(args.min_steps, args.episodes, args.gamma_eval, args.seed)
    stat = evaluation.evaluate(ckpt, budget, deterministic=args.deterministic)
    (out / "eval.json").write_text(
        json.dumps(
            {"schema": "eval.v1", "mean": stat.mean, "std": stat.std, "stderr": stat.stderr,
             "episodes": stat.episodes, "steps": stat.steps},
            sort_keys=True, indent=1,
        )
    )
    _write_manifest(out, "eval", {
        "checkpoint": args.checkpoint, "min_steps": args.min_steps, "episodes": args.episodes,
        "gamma_eval": args.gamma_eval, "seed": args.seed, "deterministic": args.deterministic,
    })
    return 0


def _grid_spec_from_args(args) -> GridSpec:
    budget = EvalBudget(args.min_steps, args.min_episodes, args.gamma_eval, args.seed)
    return GridSpec(args.range, args.samples, budget)


def cmd_surface(args) -> int:
    out = _out_dir(args)
    ckpt = nets.load_checkpoint(args.checkpoint)
    spec = _grid_spec_from_args(args)
    d1_seed = args.dir1_seed if args.dir1_seed is not None else derive_seed(args.seed, 101)
    d2_seed = args.dir2_seed if args.dir2_seed is not None else derive_seed(args.seed, 102)
    d1 = directions.sample_filter_normalized_direction(ckpt.params, ckpt.arch, d1_seed)
    d2 = directions.sample_filter_normalized_direction(ckpt.params, ckpt.arch, d2_seed)
    grid = evaluation.evaluate_grid(ckpt, d1, d2, spec, args.workers)
    evaluation.write_surface_csv(out / "surface.csv", grid)
    evaluation.write_surface_manifest(out / "surface.json", grid, __version__)
    directions.save_direction(out / "direction_x.json", d1)
    directions.save_direction(out / "direction_y.json", d2)
    _write_manifest(out, "surface", {
        "checkpoint": args.checkpoint, "range": args.range, "samples": args.samples,
        "min_steps": args.min_steps, "min_episodes": args.min_episodes,
        "gamma_eval": args.gamma_eval, "seed": args.seed, "workers": args.workers,
        "dir1_seed": d1_seed, "dir2_seed": d2_seed,
    })
    return 0


def cmd_heatmap(args) -> int:
    out = _out_dir(args)
    ckpt = nets.load_checkpoint(args.checkpoint)
    spec = _grid_spec_from_args(args)
    grid, gdir, ydir = cliffs.gradient_heatmap(
        ckpt, spec, args.grad_steps, args.seed, args.workers, args.grad_gamma
    )
    evaluation.write_surface_csv(out / "surface.csv", grid)
    evaluation.write_surface_manifest(out / "surface.json", grid, __version__)
    directions.save_direction(out / "direction_x.json", gdir)
    directions.save_direction(out / "direction_y.json", ydir)
    _write_manifest(out, "heatmap", {
        "checkpoint": args.checkpoint, "range": args.range, "samples": args.samples,
        "min_steps": args.min_steps, "min_episodes": args.min_episodes,
        "gamma_eval": args.gamma_eval, "seed": args.seed, "workers": args.workers,
        "grad_steps": args.grad_steps, "grad_gamma": args.grad_gamma,
    })
    return 0


def cmd_linesearch(args) -> int:
    out = _out_dir(args)
    run = training.RunDirectory(args.run)
    budget = EvalBudget(args.min_steps, args.min_episodes, args.gamma_eval, args.seed)
    spec = cliffs.LineSearchSpec(budget, args.distance, args.coarse, args.fine)
    result = cliffs.line_search(run, spec, args.grad_steps, args.seed, args.workers,
                                args.grad_gamma)
    cliffs.write_linesearch_csv(out / "linesearch.csv", result)
    _write_manifest(out, "linesearch", {
        "run": args.run, "distance": args.distance, "coarse": args.coarse, "fine": args.fine,
        "min_steps": args.min_steps, "min_episodes": args.min_episodes,
        "gamma_eval": args.gamma_eval, "grad_steps": args.grad_steps,
        "grad_gamma": args.grad_gamma, "seed": args.seed, "workers": args.workers,
    })
    return 0


def cmd_cliffs(args) -> int:
    out = _out_dir(args)
    rows = cliffs.read_linesearch_csv(args.linesearch)
    criteria = cliffs.CliffCriteria(args.drop, args.range_frac, args.window)
    report = cliffs.detect_cliffs(rows, criteria)
    cliffs.write_cliff_report(out / "cliffs.json", report)
    _write_manifest(out, "cliffs", {
        "linesearch": args.linesearch, "drop": args.drop, "range_frac": args.range_frac,
        "window": args.window,
    })
    return 0


def cmd_cliff_exp(args) -> int:
    out = _out_dir(args)
    table = cliffs.ExperimentTable([])
    for algo in args.algo:
        for lr in args.lr:
            part = cliffs.run_cliff_experiment(
                args.cliff_ckpts, args.noncliff_ckpts, algo, lr, args.n_steps,
                args.trials, args.eval_episodes, seed=args.seed, workers=args.workers,
                a2c_rollout=args.a2c_rollout, gamma=args.gamma,
                max_grad_norm=args.max_grad_norm, value_coef=args.value_coef,
            )
            table.extend(part)
    cliffs.write_experiment_csv(out / "experiment.csv", table)
    cliffs.write_experiment_detail_csv(out / "experiment_detail.csv", table)
    _write_manifest(out, "cliff-exp", {
        "cliff_ckpts": list(args.cliff_ckpts), "noncliff_ckpts": list(args.noncliff_ckpts),
        "algo": list(args.algo), "lr": list(args.lr), "n_steps": args.n_steps,
        "trials": args.trials, "eval_episodes": args.eval_episodes,
        "a2c_rollout": args.a2c_rollout, "gamma": args.gamma,
        "max_grad_norm": args.max_grad_norm, "value_coef": args.value_coef,
        "seed": args.seed, "workers": args.workers,
    })
    return 0


def seed_sweep(args, seeds: list[int], out: Path) -> dict:
    """train -> best checkpoint -> surface per seed, skipping seed directories
    that already contain their surface manifest."""
    completed = {}
    for seed in seeds:
        seed_dir = out / f"seed_{seed}"
        marker = seed_dir / "surface" / "surface.json"
        if marker.exists():
            completed[str(seed)] = str(seed_dir.relative_to(out))
            continue
        seed_dir.mkdir(parents=True, exist_ok=True)
        arch = _arch_from_args(args, args.env)
        config = training.TrainConfig(
            algo=args.algo,
            learning_rate=args.lr,
            n_steps=args.n_steps,
            total_steps=args.total_steps,
            checkpoint_interval=args.checkpoint_interval or args.total_steps,
            seed=seed,
            gamma=args.gamma,
            entropy_coef=args.entropy_coef,
        )
        run = training.train(args.env, arch, config, seed_dir / "run", version=__version__)
        best = training.select_best_checkpoint(run, episodes=args.best_episodes,
                                               seed=derive_seed(seed, 77))
        surface_dir = seed_dir / "surface"
        surface_dir.mkdir(exist_ok=True)
        budget = EvalBudget(args.min_steps, 1, 1.0, derive_seed(seed, 88))
        spec = GridSpec(args.range, args.samples, budget)
        d1 = directions.sample_filter_normalized_direction(
            best.params, best.arch, derive_seed(seed, 101))
        d2 = directions.sample_filter_normalized_direction(
            best.params, best.arch, derive_seed(seed, 102))
        grid = evaluation.evaluate_grid(best, d1, d2, spec, args.workers)
        evaluation.write_surface_csv(surface_dir / "surface.csv", grid)
        evaluation.write_surface_manifest(surface_dir / "surface.json", grid, __version__)
        directions.save_direction(surface_dir / "direction_x.json", d1)
        directions.save_direction(surface_dir / "direction_y.json", d2)
        completed[str(seed)] = str(seed_dir.relative_to(out))
    return completed


def cmd_seed_sweep(args) -> int:
    out = _out_dir(args)
    completed = seed_sweep(args, list(args.seeds), out)
    index = {
        "schema": SWEEP_INDEX_SCHEMA,
        "version": __version__,
        "env": args.env,
        "algo": args.algo,
        "seeds": list(args.seeds),
        "directories": completed,
    }
    (out / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))
    _write_manifest(out, "seed-sweep", {
        "env": args.env, "algo": args.algo, "seeds": list(args.seeds),
        "total_steps": args.total_steps, "checkpoint_interval": args.checkpoint_interval,
        "n_steps": args.n_steps, "lr": args.lr, "gamma": args.gamma,
        "entropy_coef": args.entropy_coef, "hidden": args.hidden,
        "best_episodes": args.best_episodes, "range": args.range, "samples": args.samples,
        "min_steps": args.min_steps, "workers": args.workers,
    })
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--algo", required=True, choices=("a2c", "ppo"))
    p.add_argument("--total-steps", type=int, required=True)
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--n-steps", type=int, default=2048)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--gae-lambda", type=float, default=None)
    p.add_argument("--ppo-epochs", type=int, default=10)
    p.add_argument("--ppo-clip", type=float, default=0.2)
    p.add_argument("--minibatches", type=int, default=4)
    p.add_argument("--value-coef", type=float, default=0.5)
    p.add_argument("--entropy-coef", type=float, default=0.0)
    p.add_argument("--max-grad-norm", type=float, default=0.5)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--separate-towers", action="store_true")


def _add_budget_flags(p: argparse.ArgumentParser, min_steps_default: int):
    p.add_argument("--min-steps", type=int, default=min_steps_default)
    p.add_argument("--min-episodes", type=int, default=1)
    p.add_argument("--gamma-eval", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewardscape",
        description="Train small policy-gradient agents and map their reward landscapes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent and write a run directory")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    _add_budget_flags(p, 10000)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("surface", help="reward surface over two random filter-normalized directions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--range", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=31)
    p.add_argument("--dir1-seed", type=int, default=None)
    p.add_argument("--dir2-seed", type=int, default=None)
    _add_budget_flags(p, 1000)
    _add_common(p)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("heatmap", help="surface over (gradient, random) directions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--range", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=31)
    p.add_argument("--grad-steps", type=int, default=20000)
    p.add_argument("--grad-gamma", type=float, default=0.99)
    _add_budget_flags(p, 1000)
    _add_common(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("linesearch", help="returns along the gradient direction per checkpoint")
    p.add_argument("--run", required=True)
    p.add_argument("--distance", type=float, default=0.4)
    p.add_argument("--coarse", type=int, default=20)
    p.add_argument("--fine", type=int, default=10)
    p.add_argument("--grad-steps", type=int, default=20000)
    p.add_argument("--grad-gamma", type=float, default=None)
    _add_budget_flags(p, 1000)
    _add_common(p)
    p.set_defaults(func=cmd_linesearch)

    p = sub.add_parser("cliffs", help="classify line-search checkpoints as cliffs")
    p.add_argument("--linesearch", required=True)
    p.add_argument("--drop", type=float, default=0.5)
    p.add_argument("--range-frac", type=float, default=0.25)
    p.add_argument("--window", type=float, default=0.04)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cliffs)

    p = sub.add_parser("cliff-exp", help="A2C/PPO percent-change experiment on cliff checkpoints")
    p.add_argument("--cliff-ckpts", nargs="+", required=True)
    p.add_argument("--noncliff-ckpts", nargs="+", required=True)
    p.add_argument("--algo", nargs="+", default=["a2c", "ppo"], choices=("a2c", "ppo"))
    p.add_argument("--lr", nargs="+", type=float, default=[1e-4])
    p.add_argument("--n-steps", type=int, default=2048)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--eval-episodes", type=int, default=1000)
    p.add_argument("--a2c-rollout", type=int, default=64)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--max-grad-norm", type=float, default=0.5)
    p.add_argument("--value-coef", type=float, default=0.5)
    _add_common(p)
    p.set_defaults(func=cmd_cliff_exp)

    p = sub.add_parser("seed-sweep", help="train + surface per seed with a montage index")
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--algo", required=True, choices=("a2c", "ppo"))
    p.add_argument("--seeds", nargs="+", type=int, required=True)
    p.add_argument("--total-steps", type=int, required=True)
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--n-steps", type=int, default=2048)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--entropy-coef", type=float, default=0.0)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--separate-towers", action="store_true")
    p.add_argument("--best-episodes", type=int, default=25)
    p.add_argument("--range", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=11)
    p.add_argument("--min-steps", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_seed_sweep)

    return parser


def dispatch(argv) -> int:
    """Parse and run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
