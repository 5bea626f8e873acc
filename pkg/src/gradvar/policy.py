"""Softmax policies over a finite action set.

Two parameter layouts are supported:

* ``per_state``: one logit per (state, action) slot, ``theta`` has length
  ``num_states * num_actions`` and is laid out row-major by state.
* ``state_agnostic``: one logit per action shared by every state, so the
  policy picks actions without looking at the state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Layout = Literal["per_state", "state_agnostic"]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    theta: np.ndarray
    num_states: int
    num_actions: int
    layout: Layout = "per_state"

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=float).reshape(-1)
        expected = self.num_actions * (self.num_states if self.layout == "per_state" else 1)
        if self.layout not in ("per_state", "state_agnostic"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if theta.size != expected:
            raise ValueError(
                f"theta has {theta.size} entries, layout {self.layout} needs {expected}"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        probs = _softmax(self.logit_table())
        probs.setflags(write=False)
        object.__setattr__(self, "_probs", probs)

    @classmethod
    def state_agnostic(cls, logits, num_states: int = 1) -> "SoftmaxPolicy":
        logits = np.asarray(logits, dtype=float)
        return cls(logits, num_states, logits.size, "state_agnostic")

    @classmethod
    def uniform(cls, num_states: int, num_actions: int, layout: Layout = "per_state") -> "SoftmaxPolicy":
        n = num_actions * (num_states if layout == "per_state" else 1)
        return cls(np.zeros(n), num_states, num_actions, layout)

    @property
    def dim(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.num_states, self.num_actions, self.layout)

    def logit_table(self) -> np.ndarray:
        """Logits as a (num_states, num_actions) array."""
        if self.layout == "per_state":
            return self.theta.reshape(self.num_states, self.num_actions)
        return np.broadcast_to(self.theta, (self.num_states, self.num_actions))

    def _check_state(self, state: int) -> None:
        if not 0 <= state < self.num_states:
            raise IndexError(f"state {state} outside [0, {self.num_states})")

    def prob_table(self) -> np.ndarray:
        """Action probabilities for every state, shape (num_states, num_actions)."""
        return self._probs

    def action_probs(self, state: int) -> np.ndarray:
        self._check_state(state)
        return self._probs[state]

    def log_prob(self, state: int, action: int) -> float:
        self._check_state(state)
        logits = self.logit_table()[state]
        m = logits.max()
        return float(logits[action] - m - np.log(np.exp(logits - m).sum()))

    def _block(self, state: int) -> slice:
        if self.layout == "per_state":
            start = state * self.num_actions
            return slice(start, start + self.num_actions)
        return slice(0, self.num_actions)

    def score(self, state: int, action: int) -> np.ndarray:
        """Gradient of ``log pi(action | state)`` with respect to theta."""
        self._check_state(state)
        if not 0 <= action < self.num_actions:
            raise IndexError(f"action {action} outside [0, {self.num_actions})")
        out = np.zeros(self.dim)
        block = -self._probs[state].copy()
        block[action] += 1.0
        out[self._block(state)] = block
        return out

    def score_table(self) -> np.ndarray:
        """All score vectors, shape (num_states, num_actions, dim)."""
        S, A = self.num_states, self.num_actions
        table = np.zeros((S, A, self.dim))
        eye = np.eye(A)
        for s in range(S):
            table[s][:, self._block(s)] = eye - self._probs[s]
        return table

    def squared_score_norm(self, state: int, action: int) -> float:
        v = self.score(state, action)
        return float(v @ v)
