"""PPO on tabular environments with an indicator-style clipped update.

Four variants share one loop:

* ``vanilla``: GAE advantages, clipped importance-weighted score update.
* ``optimal``: an extra learned ``top / bot`` baseline on the GAE advantages,
  fit from IS-weighted scores of each mini-batch.
* ``per_parameter``: a constant per-parameter optimal baseline.
* ``extra_baseline``: a second value-style table fit to the advantages.

With ``fixed_policy`` the theta update is skipped so only the baselines learn.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from ..baselines import OptimalBaseline, PerParamBaseline, ValueBaseline
from ..estimator import importance_weights, ppo_clip_mask, variance_from_samples
from ..mdp import RolloutSampler, TabularMdp, exact_expected_return
from ..policy import SoftmaxPolicy
from ..returns import gae_arrays
from .config import PpoConfig
from .sgd import IterationRecord, TrainingTrace

log = logging.getLogger(__name__)


def ppo_train(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    cfg: PpoConfig,
    value: Optional[ValueBaseline] = None,
    optimal: Optional[OptimalBaseline] = None,
    per_param: Optional[PerParamBaseline] = None,
    extra: Optional[ValueBaseline] = None,
    seed: Optional[int] = None,
) -> TrainingTrace:
    """Run PPO; the supplied baseline tables are updated in place."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    S = mdp.num_states
    value = value if value is not None else ValueBaseline(S, cfg.alpha_psi)
    if cfg.variant == "optimal" and optimal is None:
        optimal = OptimalBaseline(cfg.context, S, cfg.alpha_phi, zero_top=cfg.zero_top)
    if cfg.variant == "per_parameter" and per_param is None:
        per_param = PerParamBaseline(policy.dim, "constant", S, cfg.alpha_phi)
    if cfg.variant == "extra_baseline" and extra is None:
        extra = ValueBaseline(S, cfg.alpha_phi)

    sign = mdp.sign
    sampler = RolloutSampler(mdp)
    trace = TrainingTrace(baseline=cfg.variant, seed=seed)
    mb = cfg.minibatch_size

    for it in range(1, cfg.niterations + 1):
        buf = sampler.collect(policy, rng, cfg.nsteps)
        logp_old = buf.logprobs
        n = len(buf)
        has_next = buf.next_states >= 0
        safe_next = np.where(has_next, buf.next_states, 0)
        minibatch_g = []
        losses = {"value": [], "top": [], "bot": []}
        for epoch in range(cfg.nepochs):
            v = value.phi[buf.states]
            v_next = np.where(has_next, value.phi[safe_next], 0.0)
            F = gae_arrays(buf.rewards, v, v_next, buf.dones, cfg.gamma, cfg.kappa)
            ret = F + v
            if cfg.variant == "optimal":
                beta_all = optimal(buf.states)
            elif cfg.variant == "per_parameter":
                beta_all = per_param(buf.states)
            elif cfg.variant == "extra_baseline":
                beta_all = extra(buf.states)
            perm = rng.permutation(n)
            for start in range(0, n, mb):
                idx = perm[start:start + mb]
                s, a, f = buf.states[idx], buf.actions[idx], F[idx]
                scores = policy.score_table()[s, a]
                logp_now = np.log(policy.prob_table()[s, a])
                IS, _ = importance_weights(logp_now, logp_old[idx], cfg.is_cap)
                w = IS * ppo_clip_mask(f, IS, cfg.epsilon)
                if cfg.variant == "vanilla":
                    g = (f * w) @ scores
                elif cfg.variant == "per_parameter":
                    g = ((f[:, None] - beta_all[idx]) * w[:, None] * scores).sum(axis=0)
                else:
                    g = ((f - beta_all[idx]) * w) @ scores
                if epoch == 0:
                    minibatch_g.append(g)

                if not cfg.fixed_policy:
                    theta = policy.theta + sign * cfg.alpha_theta * g
                    if not np.isfinite(theta).all() or np.abs(theta).max() > cfg.divergence_limit:
                        trace.aborted = True
                        trace.diagnostic = f"theta diverged at iteration {it}"
                        log.warning(trace.diagnostic)
                        trace.final_theta = policy.theta.copy()
                        return trace
                    policy = policy.with_theta(theta)

                losses["value"].append(float(np.mean((ret[idx] - value.phi[s]) ** 2)))
                value.update(s, ret[idx])

                if cfg.variant in ("optimal", "per_parameter"):
                    g_sf = (f * w) @ scores
                    ws = scores * IS[:, None]
                    if cfg.variant == "optimal":
                        top_t = ws @ g_sf
                        bot_t = np.einsum("id,id->i", ws, ws)
                        losses["top"].append(float(np.mean((top_t - optimal.top[_ids(optimal, s)]) ** 2)))
                        losses["bot"].append(float(np.mean((bot_t - optimal.bot[_ids(optimal, s)]) ** 2)))
                        optimal.update(s, scores, g_sf, weights=IS)
                    else:
                        rows = np.zeros(s.size, dtype=int)
                        losses["top"].append(float(np.mean((ws * g_sf - per_param.phi_top[rows]) ** 2)))
                        losses["bot"].append(float(np.mean((ws**2 - per_param.phi_bot[rows]) ** 2)))
                        per_param.update(s, scores, g_sf, weights=IS)
                elif cfg.variant == "extra_baseline":
                    losses["top"].append(float(np.mean((f - extra.phi[s]) ** 2)))
                    extra.update(s, f)

        done_returns = _episode_returns(buf)
        var = variance_from_samples(np.array(minibatch_g)) if len(minibatch_g) >= 2 else None
        trace.records.append(IterationRecord(
            it,
            exact_expected_return(mdp, policy),
            float(np.mean(done_returns)) if done_returns else float("nan"),
            var,
            policy.theta.copy(),
            {k: float(np.mean(x)) for k, x in losses.items() if x},
        ))
    trace.final_theta = policy.theta.copy()
    return trace


def _ids(model: OptimalBaseline, states: np.ndarray) -> np.ndarray:
    return np.zeros(states.size, dtype=int) if model.context == "constant" else states


def _episode_returns(buf) -> list[float]:
    """Total reward of episodes that both start and end inside the buffer."""
    out = []
    acc = 0.0
    started = False
    for r, d in zip(buf.rewards.tolist(), buf.dones.tolist()):
        acc += r
        if d:
            if started:
                out.append(acc)
            started = True
            acc = 0.0
    return out
