"""Baseline families, their fitting rules, and exact optimal baselines.

A baseline exposes ``values(traj, policy)`` returning one scalar per step, or
one vector per step for per-parameter baselines. The learned baselines here
are tabular: their context (nothing, or the current state) indexes a table.

Two fitting modes are available for the learned tables. ``"sgd"`` follows the
squared-error gradient with a fixed learning rate; ``"mean"`` uses step
``1 / (2 * count)``, which makes every entry the running sample mean of its
targets.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Literal, Mapping, Optional, Sequence

import numpy as np

from .estimator import EstimatorConfig, PathTerms, compute_path_terms
from .mdp import TabularMdp, Trajectory, exact_value_functions
from .policy import SoftmaxPolicy

ContextKind = Literal["constant", "state", "prefix"]
FitMode = Literal["sgd", "mean"]
BOT_FLOOR = 1e-12


def context_keys(kind: ContextKind, traj: Trajectory) -> list[Hashable]:
    """Context value of every step; a prefix stops at ``s_i`` and excludes ``a_i``."""
    if kind == "constant":
        return [()] * len(traj)
    if kind == "state":
        return [int(s) for s in traj.states]
    if kind == "prefix":
        keys, acc = [], ()
        for tr in traj.transitions:
            acc = acc + (tr.state,)
            keys.append(acc)
            acc = acc + (tr.action, tr.reward)
        return keys
    raise ValueError(f"unknown context {kind!r}")


def context_ids(kind: ContextKind, states: np.ndarray) -> np.ndarray:
    """Table rows for the array-backed contexts."""
    if kind == "constant":
        return np.zeros(np.size(states), dtype=int)
    if kind == "state":
        return np.asarray(states, dtype=int)
    raise ValueError(f"context {kind!r} has no fixed table layout")


def safe_ratio(top: np.ndarray, bot: np.ndarray, floor: float = BOT_FLOOR) -> np.ndarray:
    """``top / bot`` that yields 0 wherever ``bot`` is at or below ``floor``."""
    top = np.asarray(top, dtype=float)
    bot = np.asarray(bot, dtype=float)
    out = np.zeros(np.broadcast(top, bot).shape)
    ok = bot > floor
    np.divide(top, bot, out=out, where=ok)
    return out


class ZeroBaseline:
    def values(self, traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
        return np.zeros(len(traj))


@dataclass
class TabularBaseline:
    """Fixed lookup table over a context; missing keys read as ``default``."""

    context: ContextKind
    table: dict
    default: float = 0.0

    def __call__(self, key: Hashable):
        return self.table.get(key, self.default)

    def values(self, traj: Trajectory, policy: SoftmaxPolicy) -> np.ndarray:
        keys = context_keys(self.context, traj)
        vals = [self.table.get(k, self.default) for k in keys]
        if any(np.ndim(v) for v in vals):
            return np.array([np.broadcast_to(v, (policy.dim,)) for v in vals], dtype=float)
        return np.array(vals, dtype=float)


def _sgd_or_mean(table, counts, ids, targets, lr, mode):
    """One squared-error step of ``table[ids]`` toward ``targets``."""
    if mode == "mean":
        np.add.at(counts, ids, 1)
        resid = targets - table[ids]
        # sequential running-mean updates collapse to sum / count per row
        sums = np.zeros_like(table)
        np.add.at(sums, ids, resid)
        hits = np.zeros(table.shape[0])
        np.add.at(hits, ids, 1)
        touched = hits > 0
        table[touched] += sums[touched] / counts[touched].reshape((-1,) + (1,) * (table.ndim - 1))
    elif mode == "sgd":
        grad = np.zeros_like(table)
        np.add.at(grad, ids, -2.0 * (targets - table[ids]))
        table -= lr * grad
    else:
        raise ValueError(f"unknown fit mode {mode!r}")


@dataclass
class ValueBaseline:
    """Per-state estimate of the expected return, fit by least squares."""

    num_states: int
    learning_rate: float = 0.01
    mode: FitMode = "sgd"
    phi: np.ndarray = None  # type: ignore[assignment]
    counts: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.phi = np.zeros(self.num_states) if self.phi is None else np.array(self.phi, dtype=float)
        self.counts = np.zeros(self.num_states)

    def values(self, traj: Trajectory, policy: SoftmaxPolicy = None) -> np.ndarray:
        return self.phi[traj.states]

    def __call__(self, states):
        return self.phi[states]

    def update(self, states, targets) -> "ValueBaseline":
        states = np.asarray(states, dtype=int)
        targets = np.asarray(targets, dtype=float)
        if not np.isfinite(targets).all():
            raise ValueError("value targets must be finite")
        _sgd_or_mean(self.phi, self.counts, states, targets, self.learning_rate, self.mode)
        return self


def _check_scores(scores: np.ndarray, g_sf: np.ndarray, dim: Optional[int] = None) -> None:
    if scores.ndim != 2 or g_sf.shape != (scores.shape[1],):
        raise ValueError(f"scores {scores.shape} and g_sf {g_sf.shape} do not line up")
    if dim is not None and scores.shape[1] != dim:
        raise ValueError(f"score dimension {scores.shape[1]} does not match dim(theta)={dim}")


@dataclass
class OptimalBaseline:
    """Learned ratio ``top / bot`` that targets the minimum-variance baseline.

    ``top`` regresses on ``<g_sf, score_i>`` and ``bot`` on ``||score_i||^2``.
    With ``zero_top`` the numerator is pinned at 0, so the baseline is 0.
    """

    context: ContextKind = "state"
    num_states: int = 1
    learning_rate: float = 0.01
    mode: FitMode = "sgd"
    bot_floor: float = BOT_FLOOR
    zero_top: bool = False

    def __post_init__(self) -> None:
        if self.context not in ("constant", "state"):
            raise ValueError("learned optimal baselines support constant or state context")
        n = 1 if self.context == "constant" else self.num_states
        self.top = np.zeros(n)
        self.bot = np.zeros(n)
        self._counts_top = np.zeros(n)
        self._counts_bot = np.zeros(n)

    @property
    def beta(self) -> np.ndarray:
        return safe_ratio(self.top, self.bot, self.bot_floor)

    def __call__(self, states):
        return self.beta[context_ids(self.context, states)]

    def values(self, traj: Trajectory, policy: SoftmaxPolicy = None) -> np.ndarray:
        return self(traj.states)

    def update(self, states, scores, g_sf, weights=None) -> "OptimalBaseline":
        """Regress on one mini-batch. ``weights`` rescales each score (IS ratios in PPO)."""
        scores = np.asarray(scores, dtype=float)
        g_sf = np.asarray(g_sf, dtype=float)
        _check_scores(scores, g_sf)
        if weights is not None:
            scores = scores * np.asarray(weights, dtype=float)[:, None]
        ids = context_ids(self.context, np.asarray(states))
        if not self.zero_top:
            _sgd_or_mean(self.top, self._counts_top, ids, scores @ g_sf, self.learning_rate, self.mode)
        _sgd_or_mean(self.bot, self._counts_bot, ids, np.einsum("id,id->i", scores, scores),
                     self.learning_rate, self.mode)
        return self


@dataclass
class PerParamBaseline:
    """One learned baseline per policy parameter, ``phi_top / phi_bot`` elementwise."""

    dim: int
    context: ContextKind = "constant"
    num_states: int = 1
    learning_rate: float = 0.01
    mode: FitMode = "sgd"
    bot_floor: float = BOT_FLOOR

    def __post_init__(self) -> None:
        if self.context not in ("constant", "state"):
            raise ValueError("learned per-parameter baselines support constant or state context")
        n = 1 if self.context == "constant" else self.num_states
        self.phi_top = np.zeros((n, self.dim))
        self.phi_bot = np.zeros((n, self.dim))
        self._counts_top = np.zeros(n)
        self._counts_bot = np.zeros(n)

    @property
    def beta(self) -> np.ndarray:
        return safe_ratio(self.phi_top, self.phi_bot, self.bot_floor)

    def __call__(self, states):
        return self.beta[context_ids(self.context, states)]

    def values(self, traj: Trajectory, policy: SoftmaxPolicy = None) -> np.ndarray:
        return self(traj.states)

    def update(self, states, scores, g_sf, weights=None) -> "PerParamBaseline":
        scores = np.asarray(scores, dtype=float)
        g_sf = np.asarray(g_sf, dtype=float)
        _check_scores(scores, g_sf, self.dim)
        if weights is not None:
            scores = scores * np.asarray(weights, dtype=float)[:, None]
        ids = context_ids(self.context, np.asarray(states))
        _sgd_or_mean(self.phi_top, self._counts_top, ids, scores * g_sf, self.learning_rate, self.mode)
        _sgd_or_mean(self.phi_bot, self._counts_bot, ids, scores**2, self.learning_rate, self.mode)
        return self


def _terms(mdp, policy, config, terms):
    return compute_path_terms(mdp, policy, config) if terms is None else terms


def optimal_baseline_exact(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    config: EstimatorConfig = EstimatorConfig(),
    context: ContextKind = "state",
    terms: Optional[Sequence[PathTerms]] = None,
) -> TabularBaseline:
    """Minimum-second-moment scalar baseline for every reachable context value.

    Each context pools the steps that share it, which is the exact minimizer
    when one table entry serves several steps.
    """
    num: dict = {}
    den: dict = {}
    for t in _terms(mdp, policy, config, terms):
        g = t.g_sf
        inner = t.scores @ g
        sq = np.einsum("id,id->i", t.scores, t.scores)
        for key, x, y in zip(context_keys(context, t.trajectory), inner, sq):
            num[key] = num.get(key, 0.0) + t.probability * x
            den[key] = den.get(key, 0.0) + t.probability * y
    table = {}
    for key, d in den.items():
        if d <= 0:
            raise ZeroDivisionError(f"score norm has zero expectation in context {key!r}")
        table[key] = num[key] / d
    return TabularBaseline(context, table)


def per_parameter_baseline_exact(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    config: EstimatorConfig = EstimatorConfig(),
    context: ContextKind = "constant",
    terms: Optional[Sequence[PathTerms]] = None,
) -> TabularBaseline:
    """Minimum-second-moment per-parameter baseline; idle components get 0."""
    num: dict = {}
    den: dict = {}
    for t in _terms(mdp, policy, config, terms):
        g = t.g_sf
        for key, s in zip(context_keys(context, t.trajectory), t.scores):
            num[key] = num.get(key, 0.0) + t.probability * g * s
            den[key] = den.get(key, 0.0) + t.probability * s * s
    table = {key: safe_ratio(num[key], den[key]) for key in den}
    return TabularBaseline(context, table)


def mean_weight_baseline_exact(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    config: EstimatorConfig = EstimatorConfig(),
    context: ContextKind = "state",
    terms: Optional[Sequence[PathTerms]] = None,
) -> TabularBaseline:
    """``E[F_i | context]`` pooled over steps: the exact least-squares fit of ``F``."""
    num: dict = {}
    den: dict = {}
    for t in _terms(mdp, policy, config, terms):
        for key, f in zip(context_keys(context, t.trajectory), t.f):
            num[key] = num.get(key, 0.0) + t.probability * f
            den[key] = den.get(key, 0.0) + t.probability
    return TabularBaseline(context, {k: num[k] / den[k] for k in den})


def value_baseline_exact(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float = 1.0) -> TabularBaseline:
    V, _ = exact_value_functions(mdp, policy, gamma)
    return TabularBaseline("state", {s: float(v) for s, v in enumerate(V)})


def q_weighted_baseline_exact(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float = 1.0) -> TabularBaseline:
    """``E[Q * ||score||^2] / E[||score||^2]`` over actions in each state.

    This is the minimum-variance baseline only for single-step episodes.
    """
    _, Q = exact_value_functions(mdp, policy, gamma)
    pi = policy.prob_table()
    sq = np.einsum("sad,sad->sa", policy.score_table(), policy.score_table())
    num = (pi * Q * sq).sum(axis=1)
    den = (pi * sq).sum(axis=1)
    return TabularBaseline("state", {s: float(v) for s, v in enumerate(safe_ratio(num, den))})


def control_variate_mean(terms: Sequence[PathTerms], baseline, policy: SoftmaxPolicy) -> np.ndarray:
    """Exact ``E[sum_i b_i * score_i]``, which should vanish for any valid baseline."""
    total = np.zeros(policy.dim)
    for t in terms:
        b = np.asarray(baseline.values(t.trajectory, policy), dtype=float)
        cv = b @ t.scores if b.ndim == 1 else (b * t.scores).sum(axis=0)
        total += t.probability * cv
    return total


def cross_term_conditionals(
    terms: Sequence[PathTerms], baseline, policy: SoftmaxPolicy, context: ContextKind
) -> dict[tuple[int, int, Hashable], float]:
    """``E[b(xi_i) <score_i, score_j> | xi_j]`` for every ``i != j`` and value of ``xi_j``."""
    num: dict = {}
    mass: dict = {}
    for t in terms:
        b = np.asarray(baseline.values(t.trajectory, policy), dtype=float)
        keys = context_keys(context, t.trajectory)
        gram = t.scores @ t.scores.T
        n = len(keys)
        for j in range(n):
            for i in range(n):
                if i == j:
                    continue
                k = (i, j, keys[j])
                num[k] = num.get(k, 0.0) + t.probability * b[i] * gram[i, j]
                mass[k] = mass.get(k, 0.0) + t.probability
    return {k: num[k] / mass[k] for k in num}


def save_baseline_table(path, baseline: TabularBaseline) -> None:
    """Write ``context = ...`` then one ``key = value`` line per entry."""
    lines = [f"context = {baseline.context}"]
    for key, v in baseline.table.items():
        val = " ".join(repr(float(x)) for x in np.atleast_1d(v))
        lines.append(f"{key!r} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_baseline_table(path) -> TabularBaseline:
    context = None
    table = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        k, _, v = line.rpartition(" = ")
        if k == "context":
            context = v.strip()
            continue
        nums = [float(x) for x in v.split()]
        table[ast.literal_eval(k)] = nums[0] if len(nums) == 1 else np.array(nums)
    if context is None:
        raise ValueError("baseline table file has no context line")
    return TabularBaseline(context, table)  # type: ignore[arg-type]
