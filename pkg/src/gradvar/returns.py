"""Return and advantage estimates that multiply each score function."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Sequence, Union

import numpy as np

from .mdp import Trajectory

ReturnKind = Literal["monte_carlo", "discounted", "gae"]
ValueTable = Union[np.ndarray, Sequence[float], Mapping[int, float]]


@dataclass(frozen=True)
class ReturnEstimate:
    f: float  # weight on the i-th score
    r_used: float  # return part before any baseline is subtracted
    kind: ReturnKind


@dataclass(frozen=True)
class GaeParams:
    gamma: float = 0.99
    kappa: float = 0.95

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.kappa <= 1:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")


def _suffix_discounted(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards, dtype=float)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def monte_carlo_returns(traj: Trajectory) -> list[ReturnEstimate]:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    F = _suffix_discounted(traj.rewards, 1.0)
    return [ReturnEstimate(float(f), float(f), "monte_carlo") for f in F]


def discounted_returns(traj: Trajectory, gamma: float) -> list[ReturnEstimate]:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    F = _suffix_discounted(traj.rewards, gamma)
    return [ReturnEstimate(float(f), float(f), "discounted") for f in F]


def lookup_values(vhat: ValueTable, states: np.ndarray) -> np.ndarray:
    """Gather ``vhat`` at ``states``; a missing entry raises naming the state."""
    out = np.empty(states.size)
    if isinstance(vhat, Mapping):
        for i, s in enumerate(states):
            if int(s) not in vhat:
                raise KeyError(f"no value estimate for state {int(s)}")
            out[i] = vhat[int(s)]
        return out
    table = np.asarray(vhat, dtype=float)
    for s in np.unique(states):
        if not 0 <= s < table.size or not np.isfinite(table[s]):
            raise KeyError(f"no value estimate for state {int(s)}")
    return table[states]


def gae_arrays(
    rewards: np.ndarray,
    values: np.ndarray,
    next_values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    kappa: float,
) -> np.ndarray:
    """Backward GAE recursion over a flat transition stream.

    ``next_values`` must already be 0 where the episode ended. The last
    transition of a stream that did not end bootstraps from its next value.
    """
    n = rewards.size
    delta = rewards + gamma * next_values - values
    adv = np.empty(n)
    acc = 0.0
    gk = gamma * kappa
    for t in range(n - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = delta[t] + gk * acc
        adv[t] = acc
    return adv


def discounted_return_arrays(rewards: np.ndarray, dones: np.ndarray, gamma: float,
                             bootstrap: float = 0.0) -> np.ndarray:
    n = rewards.size
    out = np.empty(n)
    acc = bootstrap
    for t in range(n - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae_advantages(traj: Trajectory, vhat: ValueTable, params: GaeParams) -> list[ReturnEstimate]:
    """GAE advantages for one finished episode; the terminal value is 0."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    v = lookup_values(vhat, traj.states)
    v_next = np.append(v[1:], 0.0)
    dones = np.zeros(len(traj), dtype=bool)
    adv = gae_arrays(traj.rewards, v, v_next, dones, params.gamma, params.kappa)
    return [ReturnEstimate(float(a), float(a + vi), "gae") for a, vi in zip(adv, v)]
