"""Baseline fitting and variance measurement with the policy held fixed.

For each saved policy, every estimator below has its value function and
baselines fit on one batch of transitions and its gradient variance measured
on a fresh batch. One gradient estimate covers ``minibatch_size``
transitions (default 1).

* ``reinforce``: discounted return, no baseline
* ``reinforce+value`` / ``reinforce+optimal``: the same return with a fitted
  state baseline
* ``gae``: GAE advantages using the fitted value function
* ``gae+optimal``: GAE plus a state-context optimal baseline
* ``gae+per_parameter``: GAE plus a constant per-parameter optimal baseline

The tabular fits use per-context sample means, which is the exact solution
of each least-squares objective on the training batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..baselines import safe_ratio
from ..estimator import variance_from_samples
from ..mdp import RolloutSampler, TabularMdp, TransitionBatch
from ..policy import SoftmaxPolicy
from ..returns import discounted_return_arrays, gae_arrays
from .config import FixedPolicyConfig

ESTIMATORS = ("reinforce", "reinforce+value", "reinforce+optimal", "gae", "gae+optimal", "gae+per_parameter")


@dataclass(frozen=True)
class FixedPolicyResult:
    policy_index: int
    replication: int
    estimator: str
    variance: float
    second_moment: float
    samples: int


def _state_means(states: np.ndarray, x: np.ndarray, num_states: int) -> np.ndarray:
    counts = np.bincount(states, minlength=num_states).astype(float)
    if x.ndim == 1:
        sums = np.bincount(states, weights=x, minlength=num_states)
        return safe_ratio(sums, counts, 0.0)
    sums = np.stack([np.bincount(states, weights=x[:, k], minlength=num_states)
                     for k in range(x.shape[1])], axis=1)
    return safe_ratio(sums, counts[:, None], 0.0)


def _gae(buf: TransitionBatch, V: np.ndarray, gamma: float, kappa: float) -> np.ndarray:
    v = V[buf.states]
    has_next = buf.next_states >= 0
    v_next = np.where(has_next, V[np.where(has_next, buf.next_states, 0)], 0.0)
    return gae_arrays(buf.rewards, v, v_next, buf.dones, gamma, kappa)


def fit_value_table(buf: TransitionBatch, num_states: int, gamma: float, kappa: float, sweeps: int) -> np.ndarray:
    """Tabular value fit: start at the Monte Carlo mean, then refit to ``F + V`` targets."""
    ret = discounted_return_arrays(buf.rewards, buf.dones, gamma)
    V = _state_means(buf.states, ret, num_states)
    for _ in range(sweeps):
        F = _gae(buf, V, gamma, kappa)
        V = _state_means(buf.states, F + V[buf.states], num_states)
    return V


def _fit_optimal(buf, F, scores, num_states) -> np.ndarray:
    sq = np.einsum("id,id->i", scores, scores)
    top = _state_means(buf.states, F * sq, num_states)
    bot = _state_means(buf.states, sq, num_states)
    return safe_ratio(top, bot)


def _fit_per_parameter(F, scores) -> np.ndarray:
    return safe_ratio((F[:, None] * scores**2).mean(axis=0), (scores**2).mean(axis=0))


def _batch_estimates(G: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    if size == 1:
        return G
    m = G.shape[0] // size
    perm = rng.permutation(G.shape[0])[: m * size]
    return G[perm].reshape(m, size, -1).sum(axis=1)


def measure_fixed_policy(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    cfg: FixedPolicyConfig,
    rng: np.random.Generator,
) -> dict[str, tuple[float, float, int]]:
    """Variance, second moment and sample count for every estimator at one policy."""
    S = mdp.num_states
    g, k = cfg.gamma, cfg.kappa
    train = RolloutSampler(mdp).collect(policy, rng, cfg.train_transitions, finish_episode=True)
    test = RolloutSampler(mdp).collect(policy, rng, cfg.eval_transitions, finish_episode=True)
    table = policy.score_table()
    sc_train = table[train.states, train.actions]
    sc_test = table[test.states, test.actions]

    ret_train = discounted_return_arrays(train.rewards, train.dones, g)
    ret_test = discounted_return_arrays(test.rewards, test.dones, g)
    V_mc = _state_means(train.states, ret_train, S)
    beta_rf = _fit_optimal(train, ret_train, sc_train, S)

    V = fit_value_table(train, S, g, k, cfg.value_sweeps)
    adv_train = _gae(train, V, g, k)
    adv_test = _gae(test, V, g, k)
    beta_gae = _fit_optimal(train, adv_train, sc_train, S)
    beta_pp = _fit_per_parameter(adv_train, sc_train)

    s = test.states
    weights = {
        "reinforce": ret_test,
        "reinforce+value": ret_test - V_mc[s],
        "reinforce+optimal": ret_test - beta_rf[s],
        "gae": adv_test,
        "gae+optimal": adv_test - beta_gae[s],
    }
    out = {}
    for name, f in weights.items():
        G = _batch_estimates(f[:, None] * sc_test, cfg.minibatch_size, rng)
        rep = variance_from_samples(G)
        out[name] = (rep.variance, rep.second_moment, G.shape[0])
    G = _batch_estimates((adv_test[:, None] - beta_pp) * sc_test, cfg.minibatch_size, rng)
    rep = variance_from_samples(G)
    out["gae+per_parameter"] = (rep.variance, rep.second_moment, G.shape[0])
    return out


def fixed_policy_variance_experiment(
    mdp: TabularMdp,
    policies: Sequence[SoftmaxPolicy],
    cfg: FixedPolicyConfig = FixedPolicyConfig(),
) -> list[FixedPolicyResult]:
    """Run every (policy, replication) cell with its own seed stream."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(policies) * cfg.replications)
    rows = []
    for p_idx, policy in enumerate(policies):
        for rep in range(cfg.replications):
            rng = np.random.default_rng(seeds[p_idx * cfg.replications + rep])
            res = measure_fixed_policy(mdp, policy, cfg, rng)
            for name in ESTIMATORS:
                var, second, m = res[name]
                rows.append(FixedPolicyResult(p_idx, rep, name, var, second, m))
    return rows


def mean_variance_by_policy(rows: Sequence[FixedPolicyResult]) -> dict[int, dict[str, float]]:
    out: dict[int, dict[str, list]] = {}
    for r in rows:
        out.setdefault(r.policy_index, {}).setdefault(r.estimator, []).append(r.variance)
    return {p: {e: float(np.mean(v)) for e, v in d.items()} for p, d in out.items()}
