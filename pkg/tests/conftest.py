import numpy as np
import pytest

from gradvar.environments import (
    DEMO_TWO_STATE_REWARDS,
    bandit_mdp,
    coinflip_mdp,
    two_state_mdp,
)
from gradvar.mdp import TabularMdp


@pytest.fixture
def coin():
    return coinflip_mdp()


@pytest.fixture
def bandit():
    return bandit_mdp()


@pytest.fixture
def two_state():
    return two_state_mdp(DEMO_TWO_STATE_REWARDS)


def random_mdp(rng: np.random.Generator, num_states=3, num_actions=2, cap=3, p_end=0.3) -> TabularMdp:
    """Small random MDP with stochastic rewards and a chance to stop after every step."""
    trans = {}
    for s in range(num_states):
        for a in range(num_actions):
            outs = []
            nxt = rng.choice(num_states, size=2, replace=False)
            w = rng.dirichlet(np.ones(3)) * np.array([1 - p_end, 1 - p_end, 0]) + np.array([0, 0, p_end])
            w = w / w.sum()
            outs.append((w[0], float(rng.normal()), int(nxt[0])))
            outs.append((w[1], float(rng.normal()), int(nxt[1])))
            outs.append((w[2], float(rng.normal()), None))
            trans[(s, a)] = outs
    init = rng.dirichlet(np.ones(num_states))
    return TabularMdp(num_states, num_actions, trans, init, horizon_cap=cap, name="random")
