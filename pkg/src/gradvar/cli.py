"""Command-line entry point.

Examples::

    gradvar coinflips --baseline state_optimal --analytic --out coin.csv
    gradvar bandit --baseline per_parameter --reps 20 --out bandit.csv
    gradvar two_state_mdp --rewards 1,2,2,0 --reps 500 --out basin.csv
    gradvar sweep --experiment coinflips --scales 1,10,100 --out ablation.csv
    gradvar ppo --env two_state_mdp --rewards 1,2,2,0 --variant optimal
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .experiments import (
    EXPERIMENTS,
    ENVIRONMENTS,
    ExperimentSpec,
    PartialRunError,
    UsageError,
    alias_overrides,
    run,
    run_sweep,
)

COMMANDS = EXPERIMENTS + ("sweep",)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid is start:stop:step")
    return tuple(float(p) for p in parts)


def _policies(text: str) -> list[tuple[float, ...]]:
    return [tuple(_floats(chunk)) for chunk in text.split(";") if chunk.strip()]


def _keyval(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradvar", description="Policy-gradient variance experiments on small MDPs.")
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="experiment to run, or 'sweep' for an analytic multi-baseline sweep")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="same as the positional command")
    p.add_argument("--baseline", default=None,
                   help="baseline name; comma-separated list for --analytic and sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=None, help="number of replications")
    p.add_argument("--lr", type=float, default=None, help="policy learning rate")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None, help="PPO clipping parameter")
    p.add_argument("--out", type=Path, default=Path("results.csv"))
    p.add_argument("--analytic", action="store_true", help="exact variance over a parameter grid")
    p.add_argument("--allow-partial", action="store_true", help="exit 0 even if replications aborted")
    p.add_argument("--config", type=Path, default=None, help="key-value config file ([sgd], [ppo], [fixed_policy])")
    p.add_argument("--set", dest="overrides", type=_keyval, action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field; repeatable")
    p.add_argument("--env", choices=ENVIRONMENTS, default="two_state_mdp",
                   help="environment for ppo and fixed_policy")
    p.add_argument("--mdp", type=Path, default=None, help="plain-text MDP file to use instead of a built-in")
    p.add_argument("--rewards", type=_floats, default=None, help="two-state rewards LL,LR,RL,RR")
    p.add_argument("--variant", choices=("vanilla", "optimal", "per_parameter", "extra_baseline"), default=None)
    p.add_argument("--policies", type=_policies, default=None,
                   help="fixed policies as logits, e.g. '0,0;1,-1'")
    p.add_argument("--grid", type=_grid, default=None, help="sweep grid start:stop:step")
    p.add_argument("--scales", type=_floats, default=None, help="reward scales for the sweep ablation")
    p.add_argument("--workers", type=int, default=None, help="process count (default: GRADVAR_THREADS or CPUs)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def spec_from_args(args: argparse.Namespace, parser: argparse.ArgumentParser) -> tuple[str, ExperimentSpec]:
    command = args.command or args.experiment
    if command is None:
        parser.error("give an experiment, either positionally or with --experiment")
    if command == "sweep":
        if args.experiment is None:
            parser.error("sweep needs --experiment")
        experiment = args.experiment
    else:
        if args.experiment is not None and args.experiment != command:
            parser.error(f"conflicting experiments {command!r} and {args.experiment!r}")
        experiment = command
    overrides = alias_overrides(experiment, lr=args.lr, iterations=args.iterations,
                                gamma=args.gamma, kappa=args.kappa, epsilon=args.epsilon)
    overrides.update(dict(args.overrides))
    spec = ExperimentSpec(
        experiment=experiment,
        baseline=args.baseline or "none",
        output_path=args.out,
        seed=args.seed,
        replications=args.reps,
        overrides=overrides,
        analytic=args.analytic,
        allow_partial=args.allow_partial,
        config_path=args.config,
        env=args.env,
        mdp_path=args.mdp,
        rewards=args.rewards,
        variant=args.variant,
        policies=args.policies,
        grid=args.grid,
        reward_scales=tuple(args.scales) if args.scales else (1.0,),
        workers=args.workers,
    )
    return command, spec


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        command, spec = spec_from_args(args, parser)
        if command == "sweep":
            names = [b for b in (args.baseline or "").split(",") if b] or None
            path = run_sweep(spec, names)
        else:
            path = run(spec)
    except UsageError as exc:
        parser.error(str(exc))
    except PartialRunError as exc:
        print(f"gradvar: {exc}", file=sys.stderr)
        return 3
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
