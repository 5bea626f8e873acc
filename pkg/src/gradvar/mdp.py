"""Finite MDPs, trajectory sampling and exhaustive path enumeration.

Enumeration is the exact oracle used throughout the package: for the small
environments studied here every trajectory can be listed together with its
probability, so any expectation over trajectories becomes a finite sum.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .policy import SoftmaxPolicy

DEFAULT_PATH_BOUND = 10**7
PROB_TOL = 1e-12


class EnumerationLimitError(RuntimeError):
    """Raised when a full enumeration would exceed the configured path bound."""

    def __init__(self, bound: int):
        super().__init__(f"trajectory enumeration exceeds the path bound of {bound} paths")
        self.bound = bound


class Outcome(NamedTuple):
    prob: float
    reward: float
    next_state: Optional[int]  # None is the terminal pseudo-state


@dataclass(frozen=True, eq=False)
class TabularMdp:
    num_states: int
    num_actions: int
    transitions: Mapping[tuple[int, int], Sequence[Outcome]]
    initial_dist: np.ndarray
    horizon_cap: int
    objective: Literal["maximize", "minimize"] = "maximize"
    name: str = "mdp"

    def __post_init__(self) -> None:
        if self.num_states < 1 or self.num_actions < 1 or self.horizon_cap < 1:
            raise ValueError("num_states, num_actions and horizon_cap must be positive")
        if self.objective not in ("maximize", "minimize"):
            raise ValueError(f"objective must be maximize or minimize, got {self.objective!r}")
        init = np.array(self.initial_dist, dtype=float).reshape(-1)
        if init.size != self.num_states or (init < 0).any() or abs(init.sum() - 1) > PROB_TOL:
            raise ValueError("initial_dist must be a probability vector over states")
        init.setflags(write=False)
        object.__setattr__(self, "initial_dist", init)

        table: dict[tuple[int, int], tuple[Outcome, ...]] = {}
        for s in range(self.num_states):
            for a in range(self.num_actions):
                if (s, a) not in self.transitions:
                    raise ValueError(f"no outcomes listed for state {s}, action {a}")
                outs = tuple(Outcome(float(p), float(r), None if n is None else int(n))
                             for p, r, n in self.transitions[(s, a)])
                probs = np.array([o.prob for o in outs])
                if (probs < 0).any() or abs(probs.sum() - 1) > PROB_TOL:
                    raise ValueError(f"outcome probabilities for ({s}, {a}) must sum to 1")
                for o in outs:
                    if o.next_state is not None and not 0 <= o.next_state < self.num_states:
                        raise ValueError(f"next state {o.next_state} out of range")
                table[(s, a)] = outs
        extra = set(self.transitions) - set(table)
        if extra:
            raise ValueError(f"transitions listed for unknown (state, action) pairs: {sorted(extra)}")
        object.__setattr__(self, "transitions", table)
        object.__setattr__(
            self, "_cum", {k: list(np.cumsum([o.prob for o in v])) for k, v in table.items()}
        )
        object.__setattr__(self, "_init_cum", list(np.cumsum(init)))

    @property
    def sign(self) -> float:
        return 1.0 if self.objective == "maximize" else -1.0

    def scaled(self, factor: float) -> "TabularMdp":
        """Same dynamics with every reward multiplied by ``factor``."""
        trans = {k: [Outcome(o.prob, o.reward * factor, o.next_state) for o in v]
                 for k, v in self.transitions.items()}
        return TabularMdp(self.num_states, self.num_actions, trans, self.initial_dist,
                          self.horizon_cap, self.objective, self.name)

    def with_horizon_cap(self, cap: int) -> "TabularMdp":
        return TabularMdp(self.num_states, self.num_actions, self.transitions,
                          self.initial_dist, cap, self.objective, self.name)

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``P[s, a, s']`` (terminal mass dropped) and expected reward ``R[s, a]``."""
        S, A = self.num_states, self.num_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for (s, a), outs in self.transitions.items():
            for o in outs:
                R[s, a] += o.prob * o.reward
                if o.next_state is not None:
                    P[s, a, o.next_state] += o.prob
        return P, R


def _draw(cum: list, u: float) -> int:
    i = bisect.bisect_right(cum, u)
    return min(i, len(cum) - 1)


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    logprob_at_sample: float
    step_index: int


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple[Transition, ...]
    total_reward: float = field(default=None)  # type: ignore[assignment]
    truncated: bool = False  # horizon cap forced the episode to end

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if self.total_reward is None:
            object.__setattr__(self, "total_reward", float(sum(t.reward for t in self.transitions)))

    def __len__(self) -> int:
        return len(self.transitions)

    @cached_property
    def states(self) -> np.ndarray:
        return np.array([t.state for t in self.transitions], dtype=int)

    @cached_property
    def actions(self) -> np.ndarray:
        return np.array([t.action for t in self.transitions], dtype=int)

    @cached_property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions], dtype=float)


@dataclass(frozen=True)
class EnumeratedPath:
    trajectory: Trajectory
    probability: float


def _check_dims(mdp: TabularMdp, policy: SoftmaxPolicy) -> None:
    if policy.num_actions != mdp.num_actions or policy.num_states != mdp.num_states:
        raise ValueError(
            f"policy is {policy.num_states}x{policy.num_actions}, "
            f"mdp is {mdp.num_states}x{mdp.num_actions}"
        )


def sample_trajectory(mdp: TabularMdp, policy: SoftmaxPolicy, rng: np.random.Generator) -> Trajectory:
    """Roll out one episode, forcing termination at the horizon cap."""
    _check_dims(mdp, policy)
    probs = policy.prob_table()
    cum_pi = [list(np.cumsum(p)) for p in probs]
    logp = np.log(probs)
    state = _draw(mdp._init_cum, rng.random())
    steps = []
    truncated = False
    for t in range(1, mdp.horizon_cap + 1):
        a = _draw(cum_pi[state], rng.random())
        outs = mdp.transitions[(state, a)]
        o = outs[_draw(mdp._cum[(state, a)], rng.random())]
        steps.append(Transition(state, a, o.reward, float(logp[state, a]), t))
        if o.next_state is None:
            break
        state = o.next_state
    else:
        truncated = True
    return Trajectory(tuple(steps), truncated=truncated)


@dataclass
class TransitionBatch:
    """Flat arrays for a stream of transitions that may span several episodes.

    ``next_states`` is -1 where the episode ended (terminal or horizon cap).
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logprobs: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray

    def __len__(self) -> int:
        return self.states.size


class RolloutSampler:
    """Environment stream that keeps its episode state between calls, like a gym env."""

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp
        self.state: Optional[int] = None
        self.t = 0

    def collect(self, policy: SoftmaxPolicy, rng: np.random.Generator, n: int,
                finish_episode: bool = False) -> TransitionBatch:
        """Next ``n`` transitions; with ``finish_episode`` keep going until the episode ends."""
        mdp = self.mdp
        _check_dims(mdp, policy)
        probs = policy.prob_table()
        cum_pi = [list(np.cumsum(p)) for p in probs]
        logp = np.log(probs).tolist()
        S, A, R, L, N, D, T = [], [], [], [], [], [], []
        state, t = self.state, self.t
        trans, cum_env, init_cum = mdp.transitions, mdp._cum, mdp._init_cum
        cap = mdp.horizon_cap
        u: list = []
        k = 0
        i = 0
        while i < n or (finish_episode and state is not None):
            if k >= len(u):
                u = rng.random((max(n - i, 64), 3)).tolist()
                k = 0
            ui = u[k]
            k += 1
            if state is None:
                state = _draw(init_cum, ui[0])
                t = 0
            a = _draw(cum_pi[state], ui[1])
            o = trans[(state, a)][_draw(cum_env[(state, a)], ui[2])]
            t += 1
            S.append(state)
            A.append(a)
            R.append(o.reward)
            L.append(logp[state][a])
            if o.next_state is None or t >= cap:
                N.append(-1)
                D.append(True)
                T.append(o.next_state is not None)
                state = None
            else:
                N.append(o.next_state)
                D.append(False)
                T.append(False)
                state = o.next_state
            i += 1
        self.state, self.t = state, t
        return TransitionBatch(
            np.array(S, dtype=int), np.array(A, dtype=int), np.array(R, dtype=float),
            np.array(L, dtype=float), np.array(N, dtype=int), np.array(D, dtype=bool),
            np.array(T, dtype=bool),
        )


def enumerate_paths(
    mdp: TabularMdp, policy: SoftmaxPolicy, bound: int = DEFAULT_PATH_BOUND
) -> list[EnumeratedPath]:
    """List every nonzero-probability trajectory exactly once.

    At the horizon cap outcomes that differ only in whether the episode would
    have continued are merged, so the capped path appears once with the
    combined probability and ``truncated=True``.
    """
    _check_dims(mdp, policy)
    probs = policy.prob_table()
    logp = np.log(probs)
    out: list[EnumeratedPath] = []
    # stack items: (state, prefix transitions, prefix probability)
    stack = [(s, (), float(p)) for s, p in reversed(list(enumerate(mdp.initial_dist))) if p > 0]
    while stack:
        state, prefix, prob = stack.pop()
        t = len(prefix) + 1
        for a in range(mdp.num_actions):
            pa = probs[state, a]
            if pa <= 0:
                continue
            outs = mdp.transitions[(state, a)]
            if t >= mdp.horizon_cap:
                merged: dict[float, list] = {}
                for o in outs:
                    if o.prob > 0:
                        entry = merged.setdefault(o.reward, [0.0, False])
                        entry[0] += o.prob
                        entry[1] |= o.next_state is not None
                for r, (p, cont) in merged.items():
                    steps = prefix + (Transition(state, a, r, float(logp[state, a]), t),)
                    out.append(EnumeratedPath(Trajectory(steps, truncated=cont), prob * pa * p))
                    if len(out) > bound:
                        raise EnumerationLimitError(bound)
                continue
            for o in reversed(outs):
                if o.prob <= 0:
                    continue
                steps = prefix + (Transition(state, a, o.reward, float(logp[state, a]), t),)
                p = prob * pa * o.prob
                if o.next_state is None:
                    out.append(EnumeratedPath(Trajectory(steps), p))
                    if len(out) > bound:
                        raise EnumerationLimitError(bound)
                else:
                    stack.append((o.next_state, steps, p))
            if len(stack) > bound:
                raise EnumerationLimitError(bound)
    return out


def count_paths(mdp: TabularMdp, policy: SoftmaxPolicy) -> int:
    """Number of paths ``enumerate_paths`` would list, without building them."""
    _check_dims(mdp, policy)
    probs = policy.prob_table()
    # n[s] = paths starting in s with t steps already taken, swept from the cap down
    nxt: list[int] = [0] * mdp.num_states
    for t in range(mdp.horizon_cap, 0, -1):
        cur = []
        for s in range(mdp.num_states):
            total = 0
            for a in range(mdp.num_actions):
                if probs[s, a] <= 0:
                    continue
                outs = [o for o in mdp.transitions[(s, a)] if o.prob > 0]
                if t >= mdp.horizon_cap:
                    total += len({o.reward for o in outs})
                else:
                    total += sum(1 if o.next_state is None else nxt[o.next_state] for o in outs)
            cur.append(total)
        nxt = cur
    return sum(nxt[s] for s, p in enumerate(mdp.initial_dist) if p > 0)


def exact_value_functions(
    mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """State values ``V[s]`` and action values ``Q[s, a]`` by solving the Bellman system.

    The horizon cap is not part of this computation; it matches enumeration
    exactly whenever episodes terminate on their own before the cap.
    """
    _check_dims(mdp, policy)
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    P, R = mdp.kernel_arrays()
    pi = policy.prob_table()
    P_pi = np.einsum("sa,sat->st", pi, P)
    r_pi = (pi * R).sum(axis=1)
    M = np.eye(mdp.num_states) - gamma * P_pi
    try:
        V = np.linalg.solve(M, r_pi)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Bellman system is singular; episodes may never terminate") from exc
    Q = R + gamma * P @ V
    return V, Q


def exact_expected_return(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float = 1.0) -> float:
    V, _ = exact_value_functions(mdp, policy, gamma)
    return float(mdp.initial_dist @ V)


def exact_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, gamma: float = 1.0) -> np.ndarray:
    """Gradient of the expected return from the discounted occupancy measure."""
    V, Q = exact_value_functions(mdp, policy, gamma)
    P, _ = mdp.kernel_arrays()
    pi = policy.prob_table()
    P_pi = np.einsum("sa,sat->st", pi, P)
    occupancy = np.linalg.solve((np.eye(mdp.num_states) - gamma * P_pi).T, mdp.initial_dist)
    scores = policy.score_table()
    return np.einsum("s,sa,sa,sad->d", occupancy, pi, Q, scores)


def enumerated_expected_reward(paths: Sequence[EnumeratedPath]) -> float:
    return float(sum(p.probability * p.trajectory.total_reward for p in paths))
