"""Built-in toy environments and the plain-text MDP file format.

MDP files are made of ``[section]`` blocks. ``[mdp]`` holds ``key = value``
pairs; ``[transitions]`` holds one outcome per line::

    [mdp]
    name = two_state
    num_states = 2
    num_actions = 2
    initial = 0.6 0.4
    horizon_cap = 200
    objective = minimize

    [transitions]
    # state action prob reward next|T
    0 0 0.8 1.0 0
    0 0 0.2 1.0 T

Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

from .mdp import Outcome, TabularMdp
from .policy import SoftmaxPolicy

# coin flips: state 0 = before any flip, 1 = first flip heads, 2 = first flip tails
COIN_START, COIN_AFTER_HEADS, COIN_AFTER_TAILS = 0, 1, 2
TAILS, HEADS = 0, 1

# two-state MDP: action 0 moves to S_L, action 1 moves to S_R
S_LEFT, S_RIGHT = 0, 1
A_LEFT, A_RIGHT = 0, 1

# Rewards reverse-engineered so the basin boundary sits at log(27/13) under the
# dynamics above. They are not the reference values.
DEMO_TWO_STATE_REWARDS = {
    (S_LEFT, A_LEFT): 1.0,
    (S_LEFT, A_RIGHT): 2.0,
    (S_RIGHT, A_LEFT): 2.0,
    (S_RIGHT, A_RIGHT): 0.0,
}

BASIN_THRESHOLD = math.log(27 / 13)

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
REWARDS_CONFIG = CONFIG_DIR / "two_state_rewards.cfg"


def coinflip_mdp(reward_scale: float = 1.0) -> TabularMdp:
    """Flip a coin twice; pay 1 for TT, 2 for HH, 4 for a mixed pair.

    The whole payoff arrives with the second flip and the first reward is 0.
    """
    payoff = {
        (COIN_AFTER_HEADS, HEADS): 2.0,
        (COIN_AFTER_HEADS, TAILS): 4.0,
        (COIN_AFTER_TAILS, HEADS): 4.0,
        (COIN_AFTER_TAILS, TAILS): 1.0,
    }
    trans = {
        (COIN_START, HEADS): [(1.0, 0.0, COIN_AFTER_HEADS)],
        (COIN_START, TAILS): [(1.0, 0.0, COIN_AFTER_TAILS)],
    }
    for key, r in payoff.items():
        trans[key] = [(1.0, r * reward_scale, None)]
    return TabularMdp(3, 2, trans, [1.0, 0.0, 0.0], horizon_cap=2, name="coinflips")


def coinflip_policy(theta1: float, theta2: float) -> SoftmaxPolicy:
    """Shared coin: ``theta1`` is the tails logit, ``theta2`` the heads logit."""
    return SoftmaxPolicy.state_agnostic([theta1, theta2], num_states=3)


def bandit_mdp(rewards: Sequence[float] = (0.0, 0.7, 1.0)) -> TabularMdp:
    trans = {(0, a): [(1.0, float(r), None)] for a, r in enumerate(rewards)}
    return TabularMdp(1, len(rewards), trans, [1.0], horizon_cap=1, name="bandit")


def bandit_policy(logits: Sequence[float]) -> SoftmaxPolicy:
    return SoftmaxPolicy.state_agnostic(logits, num_states=1)


def two_state_mdp(
    rewards,
    initial: Sequence[float] = (0.6, 0.4),
    termination: float = 0.2,
    horizon_cap: int = 200,
) -> TabularMdp:
    """Two states, two actions; each action moves to its own side.

    ``rewards`` maps ``(state, action)`` to the reward of that move, or is a
    sequence ordered (L,L), (L,R), (R,L), (R,R). Termination after each move
    stands in for discounting. The objective is minimized.
    """
    if not isinstance(rewards, dict):
        vals = list(rewards)
        if len(vals) != 4:
            raise ValueError("two_state_mdp needs exactly four rewards")
        keys = [(S_LEFT, A_LEFT), (S_LEFT, A_RIGHT), (S_RIGHT, A_LEFT), (S_RIGHT, A_RIGHT)]
        rewards = dict(zip(keys, vals))
    trans = {}
    for s in (S_LEFT, S_RIGHT):
        for a, nxt in ((A_LEFT, S_LEFT), (A_RIGHT, S_RIGHT)):
            r = float(rewards[(s, a)])
            trans[(s, a)] = [(1.0 - termination, r, nxt), (termination, r, None)]
    return TabularMdp(2, 2, trans, list(initial), horizon_cap, "minimize", "two_state_mdp")


def two_state_policy(theta1: float, theta2: float) -> SoftmaxPolicy:
    """State-agnostic: ``theta1`` is the A_L logit, ``theta2`` the A_R logit."""
    return SoftmaxPolicy.state_agnostic([theta1, theta2], num_states=2)


def _sections(text: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            out.setdefault(current, [])
        elif current is None:
            raise ValueError(f"line outside any section: {raw!r}")
        else:
            out[current].append(line)
    return out


def _keyvals(lines: list[str]) -> dict[str, str]:
    kv = {}
    for line in lines:
        if "=" not in line:
            raise ValueError(f"expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip().lower()] = v.strip()
    return kv


def parse_mdp(text: str) -> TabularMdp:
    sec = _sections(text)
    if "mdp" not in sec or "transitions" not in sec:
        raise ValueError("MDP file needs [mdp] and [transitions] sections")
    kv = _keyvals(sec["mdp"])
    trans: dict[tuple[int, int], list[Outcome]] = {}
    for line in sec["transitions"]:
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"transition line needs 'state action prob reward next|T': {line!r}")
        s, a = int(parts[0]), int(parts[1])
        nxt = None if parts[4].upper() == "T" else int(parts[4])
        trans.setdefault((s, a), []).append(Outcome(float(parts[2]), float(parts[3]), nxt))
    return TabularMdp(
        num_states=int(kv["num_states"]),
        num_actions=int(kv["num_actions"]),
        transitions=trans,
        initial_dist=[float(x) for x in kv["initial"].split()],
        horizon_cap=int(kv.get("horizon_cap", 200)),
        objective=kv.get("objective", "maximize"),
        name=kv.get("name", "mdp"),
    )


def load_mdp(path) -> TabularMdp:
    return parse_mdp(Path(path).read_text())


def format_mdp(mdp: TabularMdp) -> str:
    lines = [
        "[mdp]",
        f"name = {mdp.name}",
        f"num_states = {mdp.num_states}",
        f"num_actions = {mdp.num_actions}",
        "initial = " + " ".join(repr(float(x)) for x in mdp.initial_dist),
        f"horizon_cap = {mdp.horizon_cap}",
        f"objective = {mdp.objective}",
        "",
        "[transitions]",
    ]
    for (s, a), outs in sorted(mdp.transitions.items()):
        for o in outs:
            nxt = "T" if o.next_state is None else str(o.next_state)
            lines.append(f"{s} {a} {o.prob!r} {o.reward!r} {nxt}")
    return "\n".join(lines) + "\n"


def load_two_state_rewards(path=REWARDS_CONFIG) -> Optional[dict[tuple[int, int], float]]:
    """Read the four two-state rewards from the ``[rewards]`` section.

    Returns None when the file is missing or any entry is left blank.
    """
    path = Path(path)
    if not path.exists():
        return None
    sec = _sections(path.read_text())
    kv = {}
    for line in sec.get("rewards", []):
        k, _, v = line.partition("=")
        kv[k.strip().lower()] = v.strip()
    names = {
        "left_left": (S_LEFT, A_LEFT),
        "left_right": (S_LEFT, A_RIGHT),
        "right_left": (S_RIGHT, A_LEFT),
        "right_right": (S_RIGHT, A_RIGHT),
    }
    if any(not kv.get(n) for n in names):
        return None
    return {key: float(kv[n]) for n, key in names.items()}
