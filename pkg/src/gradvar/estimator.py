"""Score-function gradient estimators and their variance.

The estimator for one mini-batch is ``g = sum_i (F_i - b_i) * w_i * score_i``,
where ``b_i`` is a scalar or per-parameter baseline and ``w_i`` is 1 on-policy
or the clipped importance weight in PPO mode. Variance follows the vector
convention ``E||g||^2 - ||E g||^2``.

For the exact routines one estimate is built from one complete episode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Protocol, Sequence

import numpy as np

from .mdp import EnumeratedPath, TabularMdp, Trajectory, Transition, enumerate_paths
from .policy import SoftmaxPolicy
from .returns import GaeParams, ReturnEstimate, _suffix_discounted, gae_advantages

log = logging.getLogger(__name__)

IS_CAP = 1e6


class Baseline(Protocol):
    def values(self, traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
        """Baseline per step, shape (n,) for scalar or (n, dim) for per-parameter."""
        ...


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    """How the ``F_i`` of an episode are formed."""

    returns: Literal["monte_carlo", "discounted", "gae"] = "monte_carlo"
    gamma: float = 1.0
    kappa: float = 1.0
    vhat: Optional[np.ndarray] = None  # required for gae

    def __post_init__(self) -> None:
        if self.returns not in ("monte_carlo", "discounted", "gae"):
            raise ValueError(f"unknown return kind {self.returns!r}")
        if self.returns == "gae" and self.vhat is None:
            raise ValueError("gae returns need a value table")
        GaeParams(self.gamma, self.kappa)

    def weights(self, traj: Trajectory) -> np.ndarray:
        if self.returns == "monte_carlo":
            return _suffix_discounted(traj.rewards, 1.0)
        if self.returns == "discounted":
            return _suffix_discounted(traj.rewards, self.gamma)
        est = gae_advantages(traj, self.vhat, GaeParams(self.gamma, self.kappa))
        return np.array([e.f for e in est])


@dataclass(frozen=True, eq=False)
class PathTerms:
    """Everything about one enumerated path that the exact routines need."""

    probability: float
    trajectory: Trajectory
    scores: np.ndarray  # (n, dim)
    f: np.ndarray  # (n,)

    @property
    def g_sf(self) -> np.ndarray:
        return self.f @ self.scores


def trajectory_scores(traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
    table = policy.score_table()
    return table[traj.states, traj.actions]


def compute_path_terms(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    config: EstimatorConfig = EstimatorConfig(),
    paths: Optional[Sequence[EnumeratedPath]] = None,
) -> list[PathTerms]:
    if paths is None:
        paths = enumerate_paths(mdp, policy)
    table = policy.score_table()
    return [
        PathTerms(p.probability, p.trajectory,
                  table[p.trajectory.states, p.trajectory.actions],
                  config.weights(p.trajectory))
        for p in paths
    ]


def combine(f: np.ndarray, b: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """``sum_i (f_i - b_i) * score_i`` with scalar or per-parameter ``b``."""
    b = np.asarray(b, dtype=float)
    if b.ndim <= 1:
        return (f - b) @ scores
    return ((f[:, None] - b) * scores).sum(axis=0)


@dataclass(frozen=True)
class GradientComponent:
    f: float
    beta: object  # float or ndarray
    weight: float
    score: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    g: np.ndarray
    n: int
    components: Optional[tuple[GradientComponent, ...]] = None


@dataclass(frozen=True)
class VarianceReport:
    second_moment: float
    mean_norm_sq: float
    variance: float
    source: str  # "exact_enumeration" or "empirical"
    sample_count: Optional[int] = None
    stderr: Optional[float] = None


@dataclass(frozen=True)
class PpoWeighting:
    epsilon: float = 0.2
    cap: float = IS_CAP


def importance_weights(logp_now, logp_old, cap: float = IS_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ratios ``pi_now / pi_old`` and a mask of entries hit by the cap."""
    diff = np.asarray(logp_now, dtype=float) - np.asarray(logp_old, dtype=float)
    if not np.isfinite(diff).all():
        raise ValueError("log-probabilities must be finite")
    with np.errstate(over="ignore"):
        w = np.exp(diff)
    capped = w > cap
    if capped.any():
        log.warning("%d importance weights capped at %g", int(capped.sum()), cap)
        w = np.where(capped, cap, w)
    return w, capped


def importance_weight(logprob_now: float, logprob_old: float, cap: float = IS_CAP) -> float:
    w, _ = importance_weights(logprob_now, logprob_old, cap)
    return float(w)


def ppo_clip_indicator(f: float, is_ratio: float, epsilon: float) -> int:
    """0 when the sample is clipped away, 1 otherwise."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    clipped = (f > 0 and is_ratio > 1 + epsilon) or (f < 0 and is_ratio < 1 - epsilon)
    return 0 if clipped else 1


def ppo_clip_mask(f: np.ndarray, is_ratio: np.ndarray, epsilon: float) -> np.ndarray:
    clipped = ((f > 0) & (is_ratio > 1 + epsilon)) | ((f < 0) & (is_ratio < 1 - epsilon))
    return np.where(clipped, 0.0, 1.0)


def assemble(
    batch: Sequence[tuple[Transition, ReturnEstimate, object]],
    policy: SoftmaxPolicy,
    is_config: Optional[PpoWeighting] = None,
    keep_components: bool = True,
) -> GradientEstimate:
    """Build ``g`` from (transition, return estimate, baseline value) triples.

    With ``is_config`` set, each term is weighted by ``IS_i * CLIP_i`` where the
    ratio compares ``policy`` with the log-probability recorded at sampling.
    """
    g = np.zeros(policy.dim)
    parts = []
    for i, (tr, est, beta) in enumerate(batch):
        b = np.asarray(beta, dtype=float)
        if not math.isfinite(est.f) or not np.isfinite(b).all():
            raise ValueError(f"non-finite return or baseline at index {i}")
        s = policy.score(tr.state, tr.action)
        w = 1.0
        if is_config is not None:
            ratio = importance_weight(policy.log_prob(tr.state, tr.action),
                                      tr.logprob_at_sample, is_config.cap)
            w = ratio * ppo_clip_indicator(est.f, ratio, is_config.epsilon)
        g += (est.f - b) * w * s
        if keep_components:
            parts.append(GradientComponent(est.f, beta, w, s))
    return GradientEstimate(g, len(batch), tuple(parts) if keep_components else None)


def path_gradients(terms: Sequence[PathTerms], baseline: Optional[Baseline],
                   policy: SoftmaxPolicy) -> np.ndarray:
    """Gradient estimate for every enumerated path, shape (num_paths, dim)."""
    out = np.empty((len(terms), policy.dim))
    for k, t in enumerate(terms):
        if baseline is None:
            out[k] = t.g_sf
        else:
            out[k] = combine(t.f, baseline.values(t.trajectory, policy), t.scores)
    return out


def exact_moments(terms: Sequence[PathTerms], baseline: Optional[Baseline],
                  policy: SoftmaxPolicy) -> tuple[np.ndarray, VarianceReport]:
    G = path_gradients(terms, baseline, policy)
    p = np.array([t.probability for t in terms])
    mean = p @ G
    second = float(p @ np.einsum("kd,kd->k", G, G))
    mean_sq = float(mean @ mean)
    return mean, VarianceReport(second, mean_sq, second - mean_sq, "exact_enumeration")


def exact_mean_gradient(mdp, policy, config=EstimatorConfig(), baseline=None, terms=None) -> np.ndarray:
    if terms is None:
        terms = compute_path_terms(mdp, policy, config)
    return exact_moments(terms, baseline, policy)[0]


def exact_variance(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    config: EstimatorConfig = EstimatorConfig(),
    baseline: Optional[Baseline] = None,
    terms: Optional[Sequence[PathTerms]] = None,
) -> VarianceReport:
    """Exact variance of the one-episode estimator by enumerating every path."""
    if terms is None:
        terms = compute_path_terms(mdp, policy, config)
    return exact_moments(terms, baseline, policy)[1]


def variance_from_samples(G: np.ndarray) -> VarianceReport:
    """Unbiased variance of sampled gradient vectors, shape (m, dim)."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    m = G.shape[0]
    if m < 2:
        raise ValueError("need at least 2 samples to estimate a variance")
    centred = G - G.mean(axis=0)
    dev_sq = np.einsum("kd,kd->k", centred, centred)
    var = float(dev_sq.sum() / (m - 1))
    second = float(np.einsum("kd,kd->k", G, G).mean())
    stderr = float(dev_sq.std(ddof=1) / math.sqrt(m)) if m > 2 else float("nan")
    return VarianceReport(second, second - var, var, "empirical", m, stderr)


def empirical_variance(sampler: Callable[[int], np.ndarray], m: int) -> VarianceReport:
    """Draw ``m`` gradient estimates from ``sampler(m)`` and measure their variance."""
    if m < 2:
        raise ValueError("empirical variance needs m >= 2")
    G = np.asarray(sampler(m), dtype=float)
    if G.shape[0] != m:
        raise ValueError(f"sampler returned {G.shape[0]} estimates, expected {m}")
    return variance_from_samples(G)
