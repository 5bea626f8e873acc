"""Experiment runner: turns an ExperimentSpec into long-format CSV rows.

Experiments are ``coinflips``, ``bandit``, ``two_state_mdp``, ``ppo`` and
``fixed_policy``. Coin flips and the bandit also have an analytic mode that
sweeps one logit and records the exact variance of each baseline. For the
two-state MDP the analytic mode labels the basin reached by exact descent.

Replication ``r`` runs with seed ``spec.seed + r``. Replications are spread
over processes, capped by the ``GRADVAR_THREADS`` environment variable.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import ZeroBaseline
from .environments import (
    bandit_mdp,
    bandit_policy,
    coinflip_mdp,
    coinflip_policy,
    load_mdp,
    load_two_state_rewards,
    two_state_mdp,
    two_state_policy,
    A_RIGHT,
)
from .estimator import EstimatorConfig, compute_path_terms, exact_variance
from .mdp import TabularMdp, exact_expected_return
from .policy import SoftmaxPolicy
from .records import CsvRow, write_csv
from .trainers.config import FixedPolicyConfig, PpoConfig, SgdConfig, apply_overrides, read_config_sections
from .trainers.fixed_policy import ESTIMATORS, fixed_policy_variance_experiment
from .trainers.ppo import ppo_train
from .trainers.sgd import BASELINE_NAMES, EXACT_ONLY, BaselineDriver, TrainingTrace, basin_labels, sgd_train

log = logging.getLogger(__name__)

EXPERIMENTS = ("coinflips", "bandit", "two_state_mdp", "ppo", "fixed_policy")
ENVIRONMENTS = ("coinflips", "bandit", "two_state_mdp")

# starting points used by the training experiments
COIN_START = (1.0, 1.0)
BANDIT_START = (3.0, 2.0, 1.0)
TWO_STATE_START = (0.0, -1.0)

# analytic sweep grids: (start, stop, step), stop included
COIN_GRID = (-2.0, 4.0, 0.1)
BANDIT_GRID = (-4.0, 4.0, 0.1)
BASIN_GRID = (-2.0, 1.0, 0.01)
SWEEP_BASELINES = {
    "coinflips": ("value", "q_weighted", "constant_optimal", "state_optimal"),
    "bandit": ("value", "constant_optimal", "per_parameter"),
}

# pilot-calibrated budgets (see README)
SGD_DEFAULTS = {
    "coinflips": SgdConfig(iterations=2000, replications=20),
    "bandit": SgdConfig(iterations=6000, replications=20),
    "two_state_mdp": SgdConfig(iterations=2000, replications=500, variance_every=100, empirical_samples=100),
}


class UsageError(ValueError):
    """An invalid experiment specification; the message says why."""


class PartialRunError(RuntimeError):
    def __init__(self, aborted: list[int], path: Path):
        super().__init__(f"{len(aborted)} replication(s) aborted: {aborted}; rows written to {path}")
        self.aborted = aborted


@dataclass
class ExperimentSpec:
    experiment: str
    baseline: str = "none"
    output_path: Path = Path("results.csv")
    seed: int = 0
    replications: Optional[int] = None
    overrides: dict[str, str] = field(default_factory=dict)
    analytic: bool = False
    allow_partial: bool = False
    config_path: Optional[Path] = None
    env: str = "two_state_mdp"  # environment for ppo and fixed_policy
    mdp_path: Optional[Path] = None
    rewards: Optional[Sequence[float]] = None
    variant: Optional[str] = None  # ppo variant; None keeps the config value
    policies: Optional[list[tuple[float, ...]]] = None
    grid: Optional[tuple[float, float, float]] = None
    reward_scales: Sequence[float] = (1.0,)
    workers: Optional[int] = None


def grid_points(grid: tuple[float, float, float]) -> np.ndarray:
    start, stop, step = grid
    if step <= 0 or stop < start:
        raise UsageError(f"bad grid {grid}: need start <= stop and step > 0")
    n = int(round((stop - start) / step))
    return start + step * np.arange(n + 1)


def worker_count(n_tasks: int, requested: Optional[int] = None) -> int:
    cap = requested
    env = os.environ.get("GRADVAR_THREADS")
    if cap is None and env:
        try:
            cap = int(env)
        except ValueError:
            raise UsageError(f"GRADVAR_THREADS must be an integer, got {env!r}") from None
    if cap is None:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


# -- environments ---------------------------------------------------------

def resolve_two_state_rewards(spec: ExperimentSpec):
    if spec.rewards is not None:
        if len(spec.rewards) != 4:
            raise UsageError("--rewards takes four numbers: left_left,left_right,right_left,right_right")
        return list(spec.rewards)
    rewards = load_two_state_rewards()
    if rewards is None:
        raise UsageError(
            "two_state_mdp rewards are not configured: fill in configs/two_state_rewards.cfg "
            "or pass --rewards LL,LR,RL,RR"
        )
    return rewards


def build_environment(name: str, spec: ExperimentSpec) -> tuple[TabularMdp, SoftmaxPolicy]:
    if spec.mdp_path is not None:
        mdp = load_mdp(spec.mdp_path)
        return mdp, SoftmaxPolicy.uniform(mdp.num_states, mdp.num_actions)
    if name == "coinflips":
        return coinflip_mdp(), coinflip_policy(*COIN_START)
    if name == "bandit":
        return bandit_mdp(), bandit_policy(BANDIT_START)
    if name == "two_state_mdp":
        return two_state_mdp(resolve_two_state_rewards(spec)), two_state_policy(*TWO_STATE_START)
    raise UsageError(f"unknown environment {name!r}; choose from {', '.join(ENVIRONMENTS)}")


def validate(spec: ExperimentSpec) -> None:
    exp = spec.experiment
    if exp not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    if spec.analytic and exp not in ("coinflips", "bandit", "two_state_mdp"):
        raise UsageError("--analytic applies to coinflips, bandit and two_state_mdp only")
    names = [b for b in spec.baseline.split(",") if b] if spec.analytic else [spec.baseline]
    if exp in ("coinflips", "bandit", "two_state_mdp"):
        for b in names:
            if b not in BASELINE_NAMES:
                raise UsageError(f"unknown baseline {b!r}; choose from {', '.join(BASELINE_NAMES)}")
            if exp == "bandit" and "q_weighted" in b:
                raise UsageError("q_weighted needs a state to condition on; "
                                 "the bandit has a single state, so it is not defined there")
            if exp == "two_state_mdp" and not spec.analytic and (
                    b == "prefix_optimal" or b.startswith("exact_") and b != "exact_value"):
                raise UsageError("exact optimal baselines need full path enumeration, "
                                 "which the two-state MDP does not allow")
    if spec.replications is not None and spec.replications < 1:
        raise UsageError("--reps must be at least 1")


# -- config resolution ----------------------------------------------------

def _config_for(spec: ExperimentSpec, base, section: str):
    cfg = base
    if spec.config_path is not None:
        sections = read_config_sections(spec.config_path)
        if section in sections:
            cfg = apply_overrides(cfg, sections[section])
    changes = dict(spec.overrides)
    if spec.replications is not None:
        changes["replications"] = str(spec.replications)
    changes["seed"] = str(spec.seed)
    try:
        return apply_overrides(cfg, changes)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def alias_overrides(experiment: str, **flags) -> dict[str, str]:
    """Translate the generic CLI flags into field names of the experiment's config."""
    names = {
        "ppo": {"lr": "alpha_theta", "iterations": "niterations"},
        "fixed_policy": {},
    }.get(experiment, {"lr": "learning_rate", "iterations": "iterations"})
    out = {}
    for flag, value in flags.items():
        if value is None:
            continue
        if flag == "epsilon" and experiment != "ppo":
            raise UsageError("--epsilon applies to the ppo experiment only")
        if flag in ("lr", "iterations") and flag not in names:
            raise UsageError(f"--{flag} does not apply to {experiment}")
        out[names.get(flag, flag)] = str(value)
    return out


# -- analytic sweeps ------------------------------------------------------

def _exact_baseline(name: str, mdp: TabularMdp, policy: SoftmaxPolicy, config: EstimatorConfig, terms):
    if name == "none":
        return ZeroBaseline()
    full = name if name.startswith("exact_") or name in EXACT_ONLY else "exact_" + name
    if full not in BASELINE_NAMES:
        raise UsageError(f"no exact form for baseline {name!r}")
    return BaselineDriver(full, mdp, policy.dim, SgdConfig()).current(policy, config, terms)


def _sweep_policy(experiment: str, x: float) -> SoftmaxPolicy:
    if experiment == "coinflips":
        return coinflip_policy(1.0, x)
    return bandit_policy((0.0, 0.0, x))


def sweep(spec: ExperimentSpec, baselines: Sequence[str]) -> list[CsvRow]:
    """Exact variance on a grid of one logit, for each baseline and reward scale."""
    exp = spec.experiment
    if exp == "two_state_mdp":
        return basin_sweep(spec)
    if exp not in SWEEP_BASELINES:
        raise UsageError(f"analytic sweeps are available for coinflips, bandit and two_state_mdp, not {exp}")
    xs = grid_points(spec.grid or (COIN_GRID if exp == "coinflips" else BANDIT_GRID))
    axis = "theta2" if exp == "coinflips" else "theta3"
    config = EstimatorConfig()
    rows = []
    for scale_idx, c in enumerate(spec.reward_scales):
        mdp = coinflip_mdp(c) if exp == "coinflips" else bandit_mdp(tuple(c * r for r in (0.0, 0.7, 1.0)))
        for k, x in enumerate(xs):
            policy = _sweep_policy(exp, float(x))
            terms = compute_path_terms(mdp, policy, config)
            for b in baselines:
                if exp == "bandit" and "q_weighted" in b:
                    raise UsageError("q_weighted is not defined for the bandit")
                rep = exact_variance(mdp, policy, config, _exact_baseline(b, mdp, policy, config, terms), terms)
                common = dict(experiment=exp, replication=scale_idx, iteration=k, baseline=b, seed=spec.seed)
                rows.append(CsvRow(metric_name=axis, value=float(x), **common))
                rows.append(CsvRow(metric_name="reward_scale", value=float(c), **common))
                rows.append(CsvRow(metric_name="variance", value=rep.variance, **common))
                rows.append(CsvRow(metric_name="second_moment", value=rep.second_moment, **common))
    return rows


def basin_sweep(spec: ExperimentSpec) -> list[CsvRow]:
    """Exact expected reward over theta2 (theta1 = 0) and where exact descent ends up."""
    mdp = two_state_mdp(resolve_two_state_rewards(spec))
    xs = grid_points(spec.grid or BASIN_GRID)
    labels = basin_labels(mdp, xs, theta1=0.0, optimal_action=A_RIGHT)
    rows = []
    for k, (x, ok) in enumerate(zip(xs, labels)):
        common = dict(experiment="two_state_mdp", replication=0, iteration=k, baseline="exact_gradient", seed=spec.seed)
        rows.append(CsvRow(metric_name="theta2", value=float(x), **common))
        value = exact_expected_return(mdp, two_state_policy(0.0, float(x)))
        rows.append(CsvRow(metric_name="expected_reward", value=value, **common))
        rows.append(CsvRow(metric_name="final_policy", value="optimal" if ok else "suboptimal", **common))
    return rows


# -- training experiments --------------------------------------------------

def _trace_rows(exp: str, rep: int, trace: TrainingTrace, extra_metrics) -> list[CsvRow]:
    rows = []
    for rec in trace.records:
        common = dict(experiment=exp, replication=rep, iteration=rec.iteration, baseline=trace.baseline, seed=trace.seed)
        rows.append(CsvRow(metric_name="expected_reward", value=rec.expected_reward, **common))
        if np.isfinite(rec.sampled_reward):
            rows.append(CsvRow(metric_name="sampled_reward", value=rec.sampled_reward, **common))
        if rec.variance is not None:
            rows.append(CsvRow(metric_name="variance", value=rec.variance.variance, **common))
            rows.append(CsvRow(metric_name="second_moment", value=rec.variance.second_moment, **common))
        for name, v in rec.extras.items():
            rows.append(CsvRow(metric_name=f"loss_{name}", value=v, **common))
        if rec.theta is not None:
            for name, v in extra_metrics(rec.theta).items():
                rows.append(CsvRow(metric_name=name, value=v, **common))
    return rows


def _policy_metrics(exp: str, mdp: TabularMdp, template: SoftmaxPolicy):
    def metrics(theta):
        p = template.with_theta(theta)
        if exp == "coinflips":
            return {"p_heads": float(p.action_probs(0)[1])}
        if exp == "bandit":
            return {f"p_arm{a}": float(q) for a, q in enumerate(p.action_probs(0))}
        if exp == "two_state_mdp":
            return {"p_right": float(p.action_probs(0)[A_RIGHT])}
        return {}
    return metrics


def _run_sgd_replication(args) -> tuple[int, TrainingTrace]:
    rep, mdp, policy, baseline, cfg = args
    return rep, sgd_train(mdp, policy, baseline, cfg, seed=cfg.seed + rep)


def _run_ppo_replication(args) -> tuple[int, TrainingTrace]:
    rep, mdp, policy, cfg = args
    return rep, ppo_train(mdp, policy, cfg, seed=cfg.seed + rep)


def _map(fn, tasks, workers: int):
    if workers == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_sgd(spec: ExperimentSpec) -> tuple[list[CsvRow], list[int]]:
    exp = spec.experiment
    mdp, policy = build_environment(exp, spec)
    cfg = _config_for(spec, SGD_DEFAULTS[exp], "sgd")
    tasks = [(r, mdp, policy, spec.baseline, cfg) for r in range(cfg.replications)]
    results = sorted(_map(_run_sgd_replication, tasks, worker_count(len(tasks), spec.workers)), key=lambda t: t[0])
    metrics = _policy_metrics(exp, mdp, policy)
    rows, aborted = [], []
    for rep, trace in results:
        rows.extend(_trace_rows(exp, rep, trace, metrics))
        if trace.aborted:
            aborted.append(rep)
        if exp == "two_state_mdp":
            final = policy.with_theta(trace.final_theta)
            label = "optimal" if int(np.argmax(final.action_probs(0))) == A_RIGHT else "suboptimal"
            last = trace.records[-1].iteration if trace.records else 0
            rows.append(CsvRow(exp, rep, last, "final_policy", label, spec.baseline, trace.seed))
    return rows, aborted


def run_ppo(spec: ExperimentSpec) -> tuple[list[CsvRow], list[int]]:
    mdp, _ = build_environment(spec.env, spec)
    policy = SoftmaxPolicy.uniform(mdp.num_states, mdp.num_actions)
    if spec.variant is not None:
        spec = dataclasses.replace(spec, overrides={"variant": spec.variant, **spec.overrides})
    cfg = _config_for(spec, PpoConfig(), "ppo")
    tasks = [(r, mdp, policy, cfg) for r in range(cfg.replications)]
    results = sorted(_map(_run_ppo_replication, tasks, worker_count(len(tasks), spec.workers)), key=lambda t: t[0])
    rows, aborted = [], []
    for rep, trace in results:
        rows.extend(_trace_rows("ppo", rep, trace, lambda theta: {}))
        if trace.aborted:
            aborted.append(rep)
    return rows, aborted


DEFAULT_FIXED_POLICIES = {
    "coinflips": [(0.0, 0.0), (1.0, 1.5), (1.0, -1.0), (0.0, 2.0)],
    "bandit": [(0.0, 0.0, 0.0), (3.0, 2.0, 1.0), (0.0, 0.0, 2.0)],
    "two_state_mdp": [(0.0, 0.0), (0.0, -1.0), (0.0, 1.0), (0.0, 2.0)],
}


def _logits_policy(env: str, mdp: TabularMdp, logits) -> SoftmaxPolicy:
    logits = tuple(float(x) for x in logits)
    if len(logits) == mdp.num_actions:
        return SoftmaxPolicy.state_agnostic(logits, num_states=mdp.num_states)
    if len(logits) == mdp.num_states * mdp.num_actions:
        return SoftmaxPolicy(np.array(logits), mdp.num_states, mdp.num_actions)
    raise UsageError(f"policy {logits} has the wrong length for {env}")


def run_fixed_policy(spec: ExperimentSpec) -> tuple[list[CsvRow], list[int]]:
    mdp, _ = build_environment(spec.env, spec)
    cfg = _config_for(spec, FixedPolicyConfig(), "fixed_policy")
    logits = spec.policies or DEFAULT_FIXED_POLICIES.get(spec.env)
    if logits is None:
        raise UsageError("pass --policies for a custom MDP")
    policies = [_logits_policy(spec.env, mdp, p) for p in logits]
    result = fixed_policy_variance_experiment(mdp, policies, cfg)
    rows = []
    for r in sorted(result, key=lambda r: (r.replication, r.policy_index, ESTIMATORS.index(r.estimator))):
        common = dict(experiment="fixed_policy", replication=r.replication, iteration=r.policy_index,
                      baseline=r.estimator, seed=cfg.seed)
        rows.append(CsvRow(metric_name="variance", value=r.variance, **common))
        rows.append(CsvRow(metric_name="second_moment", value=r.second_moment, **common))
    return rows, []


def collect_rows(spec: ExperimentSpec) -> tuple[list[CsvRow], list[int]]:
    validate(spec)
    if spec.analytic:
        names = [b for b in spec.baseline.split(",") if b]
        return sweep(spec, names), []
    if spec.experiment == "ppo":
        return run_ppo(spec)
    if spec.experiment == "fixed_policy":
        return run_fixed_policy(spec)
    return run_sgd(spec)


def run(spec: ExperimentSpec) -> Path:
    """Run the experiment and write its CSV.

    Raises PartialRunError after writing if any replication aborted, unless
    ``allow_partial`` is set.
    """
    rows, aborted = collect_rows(spec)
    path = write_csv(spec.output_path, rows)
    if aborted:
        log.warning("aborted replications: %s", aborted)
        if not spec.allow_partial:
            raise PartialRunError(aborted, path)
    return path


def run_sweep(spec: ExperimentSpec, baselines: Optional[Sequence[str]] = None) -> Path:
    if spec.experiment not in ("coinflips", "bandit", "two_state_mdp"):
        raise UsageError("sweep supports coinflips, bandit and two_state_mdp")
    names = baselines or SWEEP_BASELINES.get(spec.experiment, ())
    validate(dataclasses.replace(spec, baseline=names[0] if names else "none", analytic=True))
    return write_csv(spec.output_path, sweep(spec, names))
