"""Plain SGD on the toy problems: one sampled episode per update."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..baselines import (
    OptimalBaseline,
    PerParamBaseline,
    ValueBaseline,
    ZeroBaseline,
    mean_weight_baseline_exact,
    optimal_baseline_exact,
    per_parameter_baseline_exact,
    q_weighted_baseline_exact,
    value_baseline_exact,
)
from ..estimator import (
    EstimatorConfig,
    VarianceReport,
    combine,
    compute_path_terms,
    exact_variance,
    trajectory_scores,
    variance_from_samples,
)
from ..mdp import (
    EnumerationLimitError,
    TabularMdp,
    count_paths,
    enumerate_paths,
    exact_expected_return,
    exact_policy_gradient,
    sample_trajectory,
)
from ..policy import SoftmaxPolicy
from ..returns import GaeParams, gae_advantages
from .config import SgdConfig

log = logging.getLogger(__name__)

LEARNED = ("none", "value", "optimal", "constant_optimal", "state_optimal", "per_parameter", "state_per_parameter")
EXACT_ONLY = ("q_weighted", "prefix_optimal")
BASELINE_NAMES = LEARNED + EXACT_ONLY + tuple(
    "exact_" + k for k in ("value", "constant_optimal", "state_optimal", "prefix_optimal",
                           "per_parameter", "state_per_parameter")
)


@dataclass
class IterationRecord:
    iteration: int
    expected_reward: float
    sampled_reward: float
    variance: Optional[VarianceReport] = None
    theta: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


@dataclass
class TrainingTrace:
    records: list[IterationRecord] = field(default_factory=list)
    baseline: str = "none"
    seed: Optional[int] = None
    aborted: bool = False
    diagnostic: Optional[str] = None
    final_theta: Optional[np.ndarray] = None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


class BaselineDriver:
    """Evaluates and updates one named baseline during SGD."""

    def __init__(self, name: str, mdp: TabularMdp, dim: int, cfg: SgdConfig):
        if name not in BASELINE_NAMES:
            raise ValueError(f"unknown baseline {name!r}; choose from {', '.join(BASELINE_NAMES)}")
        self.name = name
        self.mdp = mdp
        self.exact = name.startswith("exact_") or name in EXACT_ONLY
        kind = name.removeprefix("exact_")
        if kind == "optimal":
            # the extra baseline stacked on GAE; its context is a config choice
            kind = f"{cfg.gae_context}_optimal"
        self.kind = kind
        S, lr, mode = mdp.num_states, cfg.baseline_lr, cfg.baseline_mode
        self.model = None
        if not self.exact:
            if kind == "none":
                self.model = ZeroBaseline()
            elif kind == "value":
                self.model = ValueBaseline(S, lr, mode)
            elif kind in ("constant_optimal", "state_optimal"):
                self.model = OptimalBaseline(kind.split("_")[0], S, lr, mode)
            elif kind in ("per_parameter", "state_per_parameter"):
                ctx = "state" if kind.startswith("state") else "constant"
                self.model = PerParamBaseline(dim, ctx, S, lr, mode)

    def current(self, policy: SoftmaxPolicy, config: EstimatorConfig, terms=None):
        if not self.exact:
            return self.model
        kind = self.kind
        if kind == "q_weighted":
            return q_weighted_baseline_exact(self.mdp, policy, config.gamma)
        if kind == "value":
            if config.returns == "gae":
                return mean_weight_baseline_exact(self.mdp, policy, config, "state", terms=terms)
            return value_baseline_exact(self.mdp, policy, config.gamma)
        if terms is None:
            terms = compute_path_terms(self.mdp, policy, config)
        if kind.endswith("per_parameter"):
            ctx = "state" if kind.startswith("state") else "constant"
            return per_parameter_baseline_exact(self.mdp, policy, config, ctx, terms=terms)
        return optimal_baseline_exact(self.mdp, policy, config, kind.split("_")[0], terms=terms)

    def update(self, states, scores, f) -> None:
        if self.exact or self.kind == "none":
            return
        if isinstance(self.model, ValueBaseline):
            self.model.update(states, f)
        else:
            self.model.update(states, scores, f @ scores)


def _episode_weights(traj, cfg: SgdConfig, vhat: Optional[ValueBaseline]) -> tuple[np.ndarray, np.ndarray]:
    """``F_i`` and the value targets for one episode."""
    if cfg.estimator == "gae":
        est = gae_advantages(traj, vhat.phi, GaeParams(cfg.gamma, cfg.kappa))
        return np.array([e.f for e in est]), np.array([e.r_used for e in est])
    r = traj.rewards
    F = np.empty(r.size)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + cfg.gamma * acc
        F[t] = acc
    return F, F


def _estimator_config(cfg: SgdConfig, vhat: Optional[ValueBaseline]) -> EstimatorConfig:
    if cfg.estimator == "gae":
        return EstimatorConfig("gae", cfg.gamma, cfg.kappa, vhat.phi.copy())
    if cfg.gamma == 1.0:
        return EstimatorConfig("monte_carlo")
    return EstimatorConfig("discounted", cfg.gamma)


def _measure_variance(mdp, policy, driver, config, cfg, rng_probe, enumerable: list) -> VarianceReport:
    # the path count does not depend on theta, so it is checked once
    if enumerable[0] is None:
        enumerable[0] = count_paths(mdp, policy) <= cfg.enumeration_bound
    paths = None
    if enumerable[0]:
        try:
            paths = enumerate_paths(mdp, policy, bound=cfg.enumeration_bound)
        except EnumerationLimitError:
            enumerable[0] = False
    if paths is not None:
        terms = compute_path_terms(mdp, policy, config, paths)
        return exact_variance(mdp, policy, config, driver.current(policy, config, terms), terms)
    # too many paths: fall back to sampled episodes
    base = driver.current(policy, config)
    table = policy.score_table()
    G = np.empty((cfg.empirical_samples, policy.dim))
    for k in range(cfg.empirical_samples):
        traj = sample_trajectory(mdp, policy, rng_probe)
        F = config.weights(traj)
        G[k] = combine(F, base.values(traj, policy), table[traj.states, traj.actions])
    return variance_from_samples(G)


def sgd_train(
    mdp: TabularMdp,
    policy_init: SoftmaxPolicy,
    baseline: str,
    cfg: SgdConfig,
    seed: Optional[int] = None,
) -> TrainingTrace:
    """One replication of SGD with the named baseline.

    Each iteration samples an episode, steps theta along the estimate and then
    fits the baseline (and the GAE value function) on that same episode.
    Variance is recorded every ``cfg.variance_every`` iterations at the
    current parameters, exactly when the MDP can be enumerated.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    # separate stream so variance probes never perturb the training draws
    rng_probe = np.random.default_rng([seed, 1])
    sign = mdp.sign if cfg.objective_sign is None else cfg.objective_sign
    policy = policy_init
    driver = BaselineDriver(baseline, mdp, policy.dim, cfg)
    vhat = ValueBaseline(mdp.num_states, cfg.value_lr, cfg.baseline_mode) if cfg.estimator == "gae" else None
    trace = TrainingTrace(baseline=baseline, seed=seed)
    enumerable = [None]

    def record(it: int, sampled: float) -> None:
        var = None
        if cfg.variance_every and (it % cfg.variance_every == 0 or it == cfg.iterations):
            var = _measure_variance(mdp, policy, driver, _estimator_config(cfg, vhat), cfg, rng_probe, enumerable)
        trace.records.append(IterationRecord(
            it, exact_expected_return(mdp, policy), sampled, var,
            policy.theta.copy() if cfg.record_theta else None,
        ))

    record(0, float("nan"))
    for it in range(1, cfg.iterations + 1):
        traj = sample_trajectory(mdp, policy, rng)
        F, value_targets = _episode_weights(traj, cfg, vhat)
        scores = trajectory_scores(traj, policy)
        config = _estimator_config(cfg, vhat) if driver.exact else None
        b = driver.current(policy, config).values(traj, policy)
        g = combine(F, b, scores)

        if cfg.independent_baseline_batch:
            traj_b = sample_trajectory(mdp, policy, rng)
            F_b, targets_b = _episode_weights(traj_b, cfg, vhat)
            scores_b = trajectory_scores(traj_b, policy)
            states_b = traj_b.states
        else:
            F_b, targets_b, scores_b, states_b = F, value_targets, scores, traj.states

        theta = policy.theta + sign * cfg.learning_rate * g
        if not np.isfinite(theta).all() or np.abs(theta).max() > cfg.divergence_limit:
            trace.aborted = True
            trace.diagnostic = f"theta diverged at iteration {it}: max |theta| = {np.abs(theta).max():.3g}"
            log.warning(trace.diagnostic)
            break
        driver.update(states_b, scores_b, F_b)
        if vhat is not None:
            vhat.update(states_b, targets_b)
        policy = policy.with_theta(theta)
        record(it, traj.total_reward)
    trace.final_theta = policy.theta.copy()
    return trace


def exact_gradient_descent(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    learning_rate: float = 0.5,
    iterations: int = 2000,
    gamma: float = 1.0,
) -> SoftmaxPolicy:
    """Follow the exact expected gradient in the direction of the objective."""
    for _ in range(iterations):
        g = exact_policy_gradient(mdp, policy, gamma)
        policy = policy.with_theta(policy.theta + mdp.sign * learning_rate * g)
    return policy


def greedy_action(policy: SoftmaxPolicy, state: int = 0) -> int:
    return int(np.argmax(policy.action_probs(state)))


def basin_labels(
    mdp: TabularMdp,
    theta2_grid,
    theta1: float = 0.0,
    optimal_action: int = 1,
    **gd_kwargs,
) -> np.ndarray:
    """True where exact descent from ``(theta1, theta2)`` ends at ``optimal_action``."""
    out = []
    for t2 in theta2_grid:
        start = SoftmaxPolicy.state_agnostic([theta1, t2], num_states=mdp.num_states)
        final = exact_gradient_descent(mdp, start, **gd_kwargs)
        out.append(greedy_action(final) == optimal_action)
    return np.array(out)


def local_minima(values) -> np.ndarray:
    """Indices of grid points no larger than their neighbours (endpoints included)."""
    v = np.asarray(values, dtype=float)
    idx = []
    for i in range(v.size):
        left = v[i - 1] if i > 0 else np.inf
        right = v[i + 1] if i < v.size - 1 else np.inf
        if v[i] <= left and v[i] <= right:
            idx.append(i)
    return np.array(idx, dtype=int)
