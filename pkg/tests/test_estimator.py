import itertools
import logging

import numpy as np
import pytest

from gradvar.baselines import TabularBaseline, ZeroBaseline
from gradvar.environments import coinflip_policy
from gradvar.estimator import (
    EstimatorConfig,
    PpoWeighting,
    assemble,
    combine,
    compute_path_terms,
    empirical_variance,
    exact_mean_gradient,
    exact_variance,
    importance_weights,
    ppo_clip_indicator,
    ppo_clip_mask,
    trajectory_scores,
    variance_from_samples,
)
from gradvar.mdp import Transition, sample_trajectory
from gradvar.policy import SoftmaxPolicy
from gradvar.returns import ReturnEstimate


def test_assemble_on_policy():
    pol = SoftmaxPolicy.state_agnostic([0.2, -0.1], num_states=2)
    batch = [
        (Transition(0, 1, 1.0, pol.log_prob(0, 1), 1), ReturnEstimate(3.0, 3.0, "monte_carlo"), 1.0),
        (Transition(1, 0, 2.0, pol.log_prob(1, 0), 2), ReturnEstimate(2.0, 2.0, "monte_carlo"), 0.5),
    ]
    est = assemble(batch, pol)
    want = 2.0 * pol.score(0, 1) + 1.5 * pol.score(1, 0)
    np.testing.assert_allclose(est.g, want)
    assert est.n == 2 and est.components[0].weight == 1.0


def test_assemble_ppo_weights():
    old = SoftmaxPolicy.state_agnostic([0.0, 0.0])
    new = old.with_theta([0.0, 1.0])
    ratio = new.action_probs(0)[1] / 0.5
    tr = Transition(0, 1, 0.0, old.log_prob(0, 1), 1)
    cfg = PpoWeighting(epsilon=0.2)
    # positive advantage, ratio above 1 + eps: clipped away
    assert ratio > 1.2
    assert np.all(assemble([(tr, ReturnEstimate(1.0, 1.0, "gae"), 0.0)], new, cfg).g == 0)
    # negative advantage keeps the sample with weight IS
    g = assemble([(tr, ReturnEstimate(-1.0, -1.0, "gae"), 0.0)], new, cfg).g
    np.testing.assert_allclose(g, -ratio * new.score(0, 1))


def test_assemble_rejects_non_finite():
    pol = SoftmaxPolicy.state_agnostic([0.0, 0.0])
    tr = Transition(0, 0, 0.0, pol.log_prob(0, 0), 1)
    with pytest.raises(ValueError, match="index 1"):
        assemble([(tr, ReturnEstimate(1.0, 1.0, "gae"), 0.0), (tr, ReturnEstimate(np.nan, 0, "gae"), 0.0)], pol)


def test_clip_truth_table():
    eps = 0.2
    signs = {"neg": -1.0, "zero": 0.0, "pos": 1.0}
    regions = {"below": 0.5, "inside": 1.0, "above": 1.5}
    expected = {("pos", "above"): 0, ("neg", "below"): 0}
    for (fs, f), (rs, r) in itertools.product(signs.items(), regions.items()):
        want = expected.get((fs, rs), 1)
        assert ppo_clip_indicator(f, r, eps) == want, (fs, rs)
        assert ppo_clip_mask(np.array([f]), np.array([r]), eps)[0] == want
    # boundaries are not clipped: the conditions are strict
    assert ppo_clip_indicator(1.0, 1.2, eps) == 1 and ppo_clip_indicator(-1.0, 0.8, eps) == 1
    with pytest.raises(ValueError):
        ppo_clip_indicator(1.0, 1.0, 0.0)


def test_importance_cap_logs(caplog):
    with caplog.at_level(logging.WARNING):
        w, capped = importance_weights([50.0, 0.0], [0.0, 0.0], cap=1e6)
    assert w[0] == 1e6 and w[1] == 1.0 and capped.tolist() == [True, False]
    assert "capped" in caplog.text
    with pytest.raises(ValueError):
        importance_weights([-np.inf], [0.0])


def test_combine_scalar_and_vector():
    f = np.array([1.0, 2.0])
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(combine(f, np.array([0.5, 0.5]), s), [0.5, 1.5])
    np.testing.assert_allclose(combine(f, np.array([[1.0, 0.0], [0.0, 2.0]]), s), [0.0, 0.0])


def test_variance_from_samples_matches_numpy():
    G = np.random.default_rng(0).normal(size=(500, 3)) * [1.0, 2.0, 3.0]
    rep = variance_from_samples(G)
    assert rep.variance == pytest.approx(np.var(G, axis=0, ddof=1).sum())
    assert rep.second_moment == pytest.approx((G**2).sum(axis=1).mean())
    assert rep.sample_count == 500 and rep.source == "empirical"
    with pytest.raises(ValueError):
        variance_from_samples(G[:1])
    with pytest.raises(ValueError):
        empirical_variance(lambda m: G[:m], 1)


def test_empirical_variance_converges_to_exact(coin):
    pol = coinflip_policy(1.0, 0.5)
    exact = exact_variance(coin, pol).variance
    rng = np.random.default_rng(0)
    table = pol.score_table()

    def sampler(m):
        out = []
        for _ in range(m):
            t = sample_trajectory(coin, pol, rng)
            out.append(combine(EstimatorConfig().weights(t), np.zeros(len(t)), table[t.states, t.actions]))
        return np.array(out)

    rep = empirical_variance(sampler, 20000)
    assert rep.variance == pytest.approx(exact, abs=5 * rep.stderr)


def test_exact_variance_is_nonnegative_and_baseline_independent_mean(coin):
    pol = coinflip_policy(0.4, -0.7)
    terms = compute_path_terms(coin, pol)
    g0 = exact_mean_gradient(coin, pol, terms=terms)
    b = TabularBaseline("state", {0: 3.0, 1: -1.0, 2: 0.5})
    np.testing.assert_allclose(exact_mean_gradient(coin, pol, baseline=b, terms=terms), g0, atol=1e-12)
    assert exact_variance(coin, pol, baseline=ZeroBaseline(), terms=terms).variance >= 0


def test_trajectory_scores(coin):
    pol = coinflip_policy(0.1, 0.3)
    t = sample_trajectory(coin, pol, np.random.default_rng(1))
    s = trajectory_scores(t, pol)
    for i, tr in enumerate(t.transitions):
        np.testing.assert_array_equal(s[i], pol.score(tr.state, tr.action))


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig("gae")
    with pytest.raises(ValueError):
        EstimatorConfig("td")
