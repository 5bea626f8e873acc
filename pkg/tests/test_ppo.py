import numpy as np
import pytest

from gradvar.baselines import OptimalBaseline
from gradvar.environments import coinflip_mdp
from gradvar.mdp import exact_expected_return
from gradvar.policy import SoftmaxPolicy
from gradvar.trainers.config import PpoConfig
from gradvar.trainers.ppo import ppo_train


def uniform(mdp):
    return SoftmaxPolicy.uniform(mdp.num_states, mdp.num_actions)


def test_forced_zero_baseline_is_vanilla(two_state):
    cfg = PpoConfig(niterations=15, seed=3)
    a = ppo_train(two_state, uniform(two_state), cfg)
    b = ppo_train(two_state, uniform(two_state), PpoConfig(niterations=15, seed=3, variant="optimal", zero_top=True))
    np.testing.assert_array_equal(a.series("theta"), b.series("theta"))


def test_determinism(two_state):
    cfg = PpoConfig(niterations=5, variant="per_parameter")
    a = ppo_train(two_state, uniform(two_state), cfg)
    b = ppo_train(two_state, uniform(two_state), cfg)
    np.testing.assert_array_equal(a.final_theta, b.final_theta)
    assert [r.extras for r in a.records] == [r.extras for r in b.records]


def test_vanilla_reaches_optimum(two_state):
    best = exact_expected_return(two_state, SoftmaxPolicy(np.array([0.0, 40.0, 0.0, 40.0]), 2, 2))
    for seed in range(3):
        tr = ppo_train(two_state, uniform(two_state), PpoConfig(niterations=50, seed=seed))
        assert tr.records[-1].expected_reward <= 1.05 * best


@pytest.mark.parametrize("variant", ["optimal", "per_parameter", "extra_baseline"])
def test_variants_improve(two_state, variant):
    start = exact_expected_return(two_state, uniform(two_state))
    tr = ppo_train(two_state, uniform(two_state), PpoConfig(niterations=30, variant=variant))
    assert tr.records[-1].expected_reward < 0.5 * start
    assert {"value", "top"} <= set(tr.records[-1].extras)


def test_optimal_baseline_state_is_updated(two_state):
    opt = OptimalBaseline("state", 2)
    ppo_train(two_state, uniform(two_state), PpoConfig(niterations=3, variant="optimal"), optimal=opt)
    assert (opt.bot > 0).all()


SEED_BASE = 0


def _block_means(traces, key, blocks=5):
    """Per-seed block averages of one loss, shape (seeds, blocks)."""
    x = np.array([[r.extras[key] for r in tr.records] for tr in traces])
    return x.reshape(len(traces), blocks, -1).mean(axis=2)


@pytest.mark.parametrize("variant,keys", [
    ("vanilla", ["value"]),
    ("optimal", ["top", "bot"]),
    ("per_parameter", ["top", "bot"]),
    ("extra_baseline", ["top"]),
])
def test_fixed_policy_losses_decrease(two_state, variant, keys):
    # kappa = 1 makes the value target a plain return; freezing V (alpha_psi = 0)
    # makes the other baselines regress on fixed targets as well
    alpha_psi = 3e-4 if variant == "vanilla" else 0.0
    traces = [
        ppo_train(two_state, uniform(two_state), PpoConfig(
            nsteps=32, nepochs=1, minibatch_size=1, niterations=150, fixed_policy=True, variant=variant,
            kappa=1.0, alpha_psi=alpha_psi, alpha_phi=3e-4, seed=s))
        for s in range(SEED_BASE, SEED_BASE + 24)
    ]
    assert all((tr.final_theta == 0).all() for tr in traces)
    for key in keys:
        blocks = _block_means(traces, key)
        n = blocks.shape[0]
        # no step of the moving average rises beyond seed noise (3 standard errors, 4 steps)
        d = np.diff(blocks, axis=1)
        assert (d.mean(axis=0) < 3 * d.std(axis=0, ddof=1) / np.sqrt(n)).all(), (key, blocks.mean(axis=0))
        # and the overall drop is significant
        drop = blocks[:, -1] - blocks[:, 0]
        assert drop.mean() < -2 * drop.std(ddof=1) / np.sqrt(n), (key, blocks.mean(axis=0))


def test_divergence_guard():
    mdp = coinflip_mdp(1e12)
    tr = ppo_train(mdp, uniform(mdp), PpoConfig(niterations=5, nsteps=64, alpha_theta=1.0))
    assert tr.aborted and "diverged" in tr.diagnostic


def test_config_checks():
    with pytest.raises(ValueError):
        PpoConfig(minibatch_size=512, nsteps=256)
    with pytest.raises(ValueError):
        PpoConfig(epsilon=1.0)
    with pytest.raises(ValueError):
        PpoConfig(variant="other")
