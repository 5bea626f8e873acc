"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION <n> PASS|FAIL|SKIPPED: <detail>`` line.
Run ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import random_mdp  # noqa: E402
from gradvar.baselines import (  # noqa: E402
    OptimalBaseline,
    PerParamBaseline,
    TabularBaseline,
    control_variate_mean,
    cross_term_conditionals,
    optimal_baseline_exact,
    per_parameter_baseline_exact,
    q_weighted_baseline_exact,
    value_baseline_exact,
)
from gradvar.environments import (  # noqa: E402
    BASIN_THRESHOLD,
    DEMO_TWO_STATE_REWARDS,
    HEADS,
    bandit_mdp,
    bandit_policy,
    coinflip_mdp,
    coinflip_policy,
    load_two_state_rewards,
    two_state_mdp,
    two_state_policy,
)
from gradvar.estimator import (  # noqa: E402
    compute_path_terms,
    exact_mean_gradient,
    exact_variance,
    ppo_clip_indicator,
)
from gradvar.experiments import DEFAULT_FIXED_POLICIES  # noqa: E402
from gradvar.mdp import enumerate_paths, enumerated_expected_reward, exact_expected_return, exact_value_functions  # noqa: E402
from gradvar.mdp import Trajectory, Transition  # noqa: E402
from gradvar.policy import SoftmaxPolicy  # noqa: E402
from gradvar.returns import GaeParams, gae_advantages, monte_carlo_returns  # noqa: E402
from gradvar.trainers.config import FixedPolicyConfig, PpoConfig, SgdConfig  # noqa: E402
from gradvar.trainers.fixed_policy import fixed_policy_variance_experiment  # noqa: E402
from gradvar.trainers.ppo import ppo_train  # noqa: E402
from gradvar.trainers.sgd import basin_labels, local_minima, sgd_train  # noqa: E402


def report(capsys, n: int, status: str, detail: str) -> None:
    line = f"CRITERION {n} {status}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)


def outcome(capsys, n, check):
    """Run ``check()`` and print the verdict; failures are re-raised."""
    try:
        detail = check()
    except AssertionError as exc:
        report(capsys, n, "FAIL", str(exc).splitlines()[0] if str(exc) else "assertion failed")
        raise
    report(capsys, n, "PASS", detail)


# ---------------------------------------------------------------- checks


def check_1():
    coin = coinflip_mdp()
    t0 = time.perf_counter()
    worst = 0.0
    for t2 in np.arange(-2.0, 4.0 + 1e-9, 0.5):
        pol = coinflip_policy(1.0, t2)
        terms = compute_path_terms(coin, pol)
        b = optimal_baseline_exact(coin, pol, context="state", terms=terms)
        worst = max(worst, abs(exact_variance(coin, pol, baseline=b, terms=terms).variance))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-10, f"max variance {worst:.3g} > 1e-10"
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    return f"max |variance| {worst:.2e} over 13 grid points in {elapsed:.3f}s"


def check_2():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = np.inf
    for mdp, dim in ((coinflip_mdp(), 2), (bandit_mdp(), 3)):
        for _ in range(20):
            theta = rng.normal(scale=1.5, size=dim)
            pol = coinflip_policy(*theta) if dim == 2 else bandit_policy(theta)
            terms = compute_path_terms(mdp, pol)
            best = exact_variance(mdp, pol, baseline=optimal_baseline_exact(mdp, pol, terms=terms), terms=terms).variance
            rivals = [None, value_baseline_exact(mdp, pol), q_weighted_baseline_exact(mdp, pol)]
            rivals += [TabularBaseline("state", {s: float(x) for s, x in enumerate(rng.normal(scale=3, size=mdp.num_states))})
                       for _ in range(100)]
            for b in rivals:
                margin = exact_variance(mdp, pol, baseline=b, terms=terms).variance - best
                worst = min(worst, margin)
    elapsed = time.perf_counter() - t0
    assert worst >= -1e-10, f"a rival beat the optimal baseline by {-worst:.3g}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    return f"smallest margin {worst:.2e} over 2 x 20 draws x 103 rivals in {elapsed:.2f}s"


def check_3():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        mdp = bandit_mdp(tuple(rng.normal(size=2)))
        pol = bandit_policy([rng.normal()] * 2)
        opt = optimal_baseline_exact(mdp, pol, context="state").table[0]
        V = exact_value_functions(mdp, pol)[0][0]
        worst = max(worst, abs(opt - V))
    assert worst <= 1e-10, f"|optimal - V| = {worst:.3g}"
    return f"max |optimal - V| {worst:.2e} over 10 reward draws"


def _families(mdp, pol, terms):
    out = {
        "zero": None,
        "value": value_baseline_exact(mdp, pol),
        "q_weighted": q_weighted_baseline_exact(mdp, pol),
    }
    for ctx in ("constant", "state", "prefix"):
        out[f"{ctx}_optimal"] = optimal_baseline_exact(mdp, pol, context=ctx, terms=terms)
        out[f"{ctx}_per_parameter"] = per_parameter_baseline_exact(mdp, pol, context=ctx, terms=terms)
    return out


def check_4():
    rng = np.random.default_rng(4)
    cases = [(coinflip_mdp(), coinflip_policy(0.4, -0.8)), (bandit_mdp(), bandit_policy([0.3, -1.0, 0.5]))]
    for k in range(3):
        mdp = random_mdp(np.random.default_rng(100 + k))
        cases.append((mdp, SoftmaxPolicy(rng.normal(size=mdp.num_states * mdp.num_actions), mdp.num_states, mdp.num_actions)))
    bias = fd_err = 0.0
    h = 1e-5
    for mdp, pol in cases:
        terms = compute_path_terms(mdp, pol)
        g_sf = exact_mean_gradient(mdp, pol, terms=terms)
        for b in _families(mdp, pol, terms).values():
            if b is not None:
                bias = max(bias, np.abs(control_variate_mean(terms, b, pol)).max())
            bias = max(bias, np.abs(exact_mean_gradient(mdp, pol, baseline=b, terms=terms) - g_sf).max())
        fd = np.zeros(pol.dim)
        for j in range(pol.dim):
            e = np.zeros(pol.dim)
            e[j] = h
            up = enumerated_expected_reward(enumerate_paths(mdp, pol.with_theta(pol.theta + e)))
            dn = enumerated_expected_reward(enumerate_paths(mdp, pol.with_theta(pol.theta - e)))
            fd[j] = (up - dn) / (2 * h)
        fd_err = max(fd_err, np.abs(fd - g_sf).max())
    assert bias <= 1e-10, f"baseline shifted the mean by {bias:.3g}"
    assert fd_err <= 1e-6, f"score-function mean off finite differences by {fd_err:.3g}"
    return f"max mean shift {bias:.2e}, finite-difference error {fd_err:.2e} on {len(cases)} problems"


def check_5():
    coin = coinflip_mdp()
    rng = np.random.default_rng(5)
    worst, count = 0.0, 0
    for _ in range(5):
        pol = coinflip_policy(*rng.normal(size=2))
        terms = compute_path_terms(coin, pol)
        bases = [
            ("state", TabularBaseline("state", {s: float(x) for s, x in enumerate(rng.normal(size=3))})),
            ("state", optimal_baseline_exact(coin, pol, context="state", terms=terms)),
            ("prefix", optimal_baseline_exact(coin, pol, context="prefix", terms=terms)),
        ]
        for ctx, b in bases:
            vals = cross_term_conditionals(terms, b, pol, ctx)
            count += len(vals)
            worst = max(worst, max(abs(v) for v in vals.values()))
    assert worst <= 1e-10, f"cross term {worst:.3g}"
    return f"max |conditional cross term| {worst:.2e} over {count} (i, j, context) cells"


def _double_sum(rewards, values, gamma, kappa):
    n = len(rewards)
    v_next = list(values[1:]) + [0.0]
    delta = [rewards[t] + gamma * v_next[t] - values[t] for t in range(n)]
    return np.array([sum((gamma * kappa) ** (k - i) * delta[k] for k in range(i, n)) for i in range(n)])


def check_6():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        states = rng.integers(0, 4, 10)
        rewards = rng.normal(size=10)
        vhat = rng.normal(size=4)
        gamma, kappa = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        traj = Trajectory(tuple(Transition(int(s), 0, float(r), 0.0, t + 1)
                                for t, (s, r) in enumerate(zip(states, rewards))))
        mc = [e.f for e in monte_carlo_returns(traj)]
        assert [e.f for e in gae_advantages(traj, np.zeros(4), GaeParams(1.0, 1.0))] == mc, "MC reduction"
        td = [e.f for e in gae_advantages(traj, vhat, GaeParams(gamma, 0.0))]
        v_next = np.append(vhat[states][1:], 0.0)
        assert td == list(rewards + gamma * v_next - vhat[states]), "TD reduction"
        got = np.array([e.f for e in gae_advantages(traj, vhat, GaeParams(gamma, kappa))])
        worst = max(worst, np.abs(got - _double_sum(rewards, vhat[states], gamma, kappa)).max())
    assert worst <= 1e-10, f"recursion vs double sum {worst:.3g}"
    return f"both reductions exact; recursion vs double sum {worst:.2e} on 200 trajectories"


def check_7():
    mdp = bandit_mdp()
    pol = bandit_policy([3.0, 2.0, 1.0])
    terms = compute_path_terms(mdp, pol)
    exact_opt = optimal_baseline_exact(mdp, pol, context="constant", terms=terms).table[()]
    exact_pp = per_parameter_baseline_exact(mdp, pol, terms=terms).table[()]
    rng = np.random.default_rng(7)
    probs = pol.action_probs(0)
    table = pol.score_table()[0]
    rewards = np.array([mdp.transitions[(0, a)][0].reward for a in range(3)])
    opt = OptimalBaseline("constant", mode="mean")
    pp = PerParamBaseline(3, mode="mean")
    for a in rng.choice(3, size=100_000, p=probs):
        s = table[a][None, :]
        g = rewards[a] * table[a]
        opt.update([0], s, g)
        pp.update([0], s, g)
    err_opt = abs(opt.beta[0] - exact_opt)
    err_pp = np.abs(pp.beta[0] - exact_pp).max()
    v_opt = exact_variance(mdp, pol, baseline=TabularBaseline("constant", {(): exact_opt}), terms=terms).variance
    v_pp = exact_variance(mdp, pol, baseline=TabularBaseline("constant", {(): exact_pp}), terms=terms).variance
    assert err_opt <= 1e-2, f"scalar fit error {err_opt:.3g}"
    assert err_pp <= 1e-2, f"per-parameter fit error {err_pp:.3g}"
    assert v_pp < v_opt, f"per-parameter variance {v_pp:.4g} not below scalar {v_opt:.4g}"
    return (f"fit errors {err_opt:.4f} (scalar), {err_pp:.4f} (per-parameter); "
            f"variance ratio scalar/per-parameter {v_opt / v_pp:.2f} (informational, expected about 10)")


def check_8():
    coin = coinflip_mdp()
    cfg = SgdConfig(learning_rate=0.01, iterations=2000, variance_every=0, record_theta=True)
    template = coinflip_policy(1.0, 1.0)
    t0 = time.perf_counter()
    p_heads = {}
    for name in ("state_optimal", "value"):
        rows = []
        for rep in range(20):
            tr = sgd_train(coin, template, name, cfg, seed=rep)
            rows.append([template.with_theta(th).action_probs(0)[HEADS] for th in tr.series("theta")])
        p_heads[name] = np.array(rows)
    elapsed = time.perf_counter() - t0
    tail = slice(-len(p_heads["value"][0]) // 10, None)
    mean_opt = p_heads["state_optimal"][:, tail].mean()
    spread = {k: v[:, tail].std(axis=0, ddof=1).mean() for k, v in p_heads.items()}
    assert abs(mean_opt - 0.6) <= 0.05, f"mean P(heads) {mean_opt:.4f}"
    assert spread["state_optimal"] < spread["value"], f"spreads {spread}"
    assert elapsed < 60, f"took {elapsed:.1f}s"
    return (f"mean P(heads) {mean_opt:.4f}; tail spread state_optimal {spread['state_optimal']:.4f} "
            f"< value {spread['value']:.4f}; {elapsed:.1f}s")


def basin_checks(rewards):
    """Descent flip location and local-minimum count for one reward table."""
    mdp = two_state_mdp(rewards)
    threshold = -BASIN_THRESHOLD  # theta1 = 0
    grid = threshold + np.round(np.arange(-0.2, 0.2 + 1e-9, 0.01), 10)
    labels = basin_labels(mdp, grid, theta1=0.0)
    flips = np.flatnonzero(labels[1:] != labels[:-1])
    assert flips.size == 1, f"{flips.size} basin flips on the grid"
    flip_at = 0.5 * (grid[flips[0]] + grid[flips[0] + 1])
    assert abs(flip_at - threshold) <= 0.02, f"flip at {flip_at:.4f}, threshold {threshold:.4f}"
    curve_grid = np.arange(-2.0, 1.0 + 1e-9, 0.01)
    curve = [exact_expected_return(mdp, two_state_policy(0.0, t)) for t in curve_grid]
    minima = local_minima(curve)
    assert minima.size == 2, f"{minima.size} local minima at theta2 = {curve_grid[minima]}"
    return f"flip at {flip_at:.3f} (threshold {threshold:.4f}); minima at theta2 = {np.round(curve_grid[minima], 2).tolist()}"


def check_9():
    rewards = load_two_state_rewards()
    if rewards is None:
        return None
    return basin_checks(rewards)


def check_10():
    t0 = time.perf_counter()
    rewards = load_two_state_rewards() or DEMO_TWO_STATE_REWARDS
    ts = two_state_mdp(rewards)
    uni = SoftmaxPolicy.uniform(2, 2)
    a = ppo_train(ts, uni, PpoConfig(niterations=20, seed=11))
    b = ppo_train(ts, uni, PpoConfig(niterations=20, seed=11, variant="optimal", zero_top=True))
    assert np.array_equal(a.series("theta"), b.series("theta")), "forced-zero trajectory differs"

    eps = 0.2
    for f in (-1.0, 0.0, 1.0):
        for ratio in (0.5, 1.0, 1.5):
            want = 0 if (f > 0 and ratio > 1 + eps) or (f < 0 and ratio < 1 - eps) else 1
            assert ppo_clip_indicator(f, ratio, eps) == want, f"clip indicator wrong at F={f}, IS={ratio}"

    cfg = FixedPolicyConfig()
    envs = {
        "coinflips": (coinflip_mdp(), [coinflip_policy(*p) for p in DEFAULT_FIXED_POLICIES["coinflips"]]),
        "two_state_mdp": (ts, [two_state_policy(*p) for p in DEFAULT_FIXED_POLICIES["two_state_mdp"]]),
    }
    notes = []
    for env, (mdp, policies) in envs.items():
        rows = fixed_policy_variance_experiment(mdp, policies, cfg)
        var = {}
        for r in rows:
            var.setdefault((r.policy_index, r.estimator), []).append(r.variance)
        per_rep_violations = 0
        for p in range(len(policies)):
            rf, rv, gae = (np.array(var[(p, k)]) for k in ("reinforce", "reinforce+value", "gae"))
            assert len(rf) == cfg.replications
            assert rf.mean() >= rv.mean() >= gae.mean(), (
                f"{env} policy {p}: {rf.mean():.4g}, {rv.mean():.4g}, {gae.mean():.4g}")
            per_rep_violations += int(((rf < rv) | (rv < gae)).sum())
        notes.append(f"{env} {len(policies)} policies ok ({per_rep_violations} single-replication inversions)")
    elapsed = time.perf_counter() - t0
    assert elapsed < 300, f"took {elapsed:.0f}s"
    return f"theta bit-identical; 9/9 clip cells; {'; '.join(notes)}; {elapsed:.0f}s"


CHECKS = {1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5,
          6: check_6, 7: check_7, 8: check_8, 9: check_9, 10: check_10}


# ---------------------------------------------------------------- tests


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 8, 10])
def test_criterion(n, capsys):
    outcome(capsys, n, CHECKS[n])


def test_criterion_9_basin(capsys):
    if load_two_state_rewards() is None:
        report(capsys, 9, "SKIPPED", "two-state rewards are not configured (configs/two_state_rewards.cfg)")
        pytest.skip("two-state rewards are not configured")
    outcome(capsys, 9, check_9)


def test_basin_checks_on_demo_rewards():
    # the same checks on the reconstructed rewards; this is not criterion 9
    basin_checks(DEMO_TWO_STATE_REWARDS)


if __name__ == "__main__":
    failed = 0
    for n, check in CHECKS.items():
        try:
            detail = check()
        except AssertionError as exc:
            failed += 1
            report(None, n, "FAIL", str(exc))
            continue
        if detail is None:
            report(None, n, "SKIPPED", "two-state rewards are not configured (configs/two_state_rewards.cfg)")
        else:
            report(None, n, "PASS", detail)
    sys.exit(1 if failed else 0)
