import numpy as np
import pytest

from lbcrl.env import DeterministicMdp, EnvSpec, TabularPolicy, exact_policy_value, make_rotated_tabular
from lbcrl.fqi import LinearGreedyPolicy
from lbcrl.rollout import (
    RngStream,
    exact_feature_expectation,
    mc_policy_value,
    rollout_batch,
    sample_trajectory,
    vec_eval,
)


def rt(S=4, A=2, H=3, seed=0, noise=0.5):
    return make_rotated_tabular(EnvSpec("rotated_tabular", S * A, H, S, A, seed, noise))


def random_policy(mdp, seed):
    return LinearGreedyPolicy(np.random.default_rng(seed).normal(size=(mdp.H, mdp.d)))


# -- RNG streams --------------------------------------------------------------


def test_rng_stream_reproducible():
    a = RngStream(5, 3).generator().random(4)
    b = RngStream(5, 3).generator().random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, RngStream(5, 4).generator().random(4))


def test_rng_child_streams_differ_and_repeat():
    root = RngStream(9)
    assert root.child(1) == root.child(1)
    assert root.child(1) != root.child(2)


def test_rng_streams_uncorrelated():
    x = RngStream(1, 0).generator().standard_normal(20000)
    y = RngStream(1, 1).generator().standard_normal(20000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(20000)


# -- trajectories -------------------------------------------------------------


def test_trajectory_single_pair():
    mdp = rt(S=1, A=1, H=1)
    tr = sample_trajectory(mdp, TabularPolicy(np.zeros((1, 1), int)), 0, np.random.default_rng(0))
    assert len(tr) == 1
    assert tr.states[0] == 0 and tr.actions[0] == 0


def test_trajectory_noiseless_rewards_are_means():
    mdp = rt(noise=0.0)
    pi = random_policy(mdp, 1)
    tr = sample_trajectory(mdp, pi, mdp.H - 1, np.random.default_rng(0))
    np.testing.assert_array_equal(tr.rewards, mdp.reward_means[np.arange(mdp.H), tr.states, tr.actions])


def test_trajectory_follows_dynamics_and_is_reproducible():
    mdp = rt()
    pi = random_policy(mdp, 2)
    tr = sample_trajectory(mdp, pi, mdp.H - 1, RngStream(4).generator())
    again = sample_trajectory(mdp, pi, mdp.H - 1, RngStream(4).generator())
    np.testing.assert_array_equal(tr.rewards, again.rewards)
    for h in range(mdp.H - 1):
        assert tr.states[h + 1] == mdp.transition[h, tr.states[h], tr.actions[h]]
    for h in range(mdp.H):
        np.testing.assert_array_equal(tr.features[h], mdp.features[h, tr.states[h], tr.actions[h]])


def test_trajectory_rejects_bad_layer():
    mdp = rt()
    with pytest.raises(ValueError):
        sample_trajectory(mdp, random_policy(mdp, 0), mdp.H, np.random.default_rng(0))


# -- batches ------------------------------------------------------------------


def test_batch_matches_literal_rollouts_in_law():
    """Per-start visit frequencies and reward means agree with one-at-a-time sampling."""
    mdp = rt(S=3, A=2, H=2, seed=3)
    pi = random_policy(mdp, 3)
    rng = np.random.default_rng(0)
    n = 4000
    lit = [sample_trajectory(mdp, pi, 1, rng) for _ in range(n)]
    lit_start = np.bincount([t.states[0] for t in lit], minlength=3) / n
    lit_reward = np.mean([t.rewards.sum() for t in lit])
    batch = rollout_batch(mdp, pi, 1, n, np.random.default_rng(1))
    b_start = np.zeros(3)
    b_start[batch.starts] = batch.counts / n
    assert np.max(np.abs(lit_start - b_start)) < 4 * np.sqrt(0.25 / n) * np.sqrt(2)
    assert abs(lit_reward - batch.reward_sums.sum() / n) < 4 * np.sqrt(2 * 0.5 / n)


def test_batch_rejects_bad_counts():
    mdp = rt()
    with pytest.raises(ValueError):
        rollout_batch(mdp, random_policy(mdp, 0), 0, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        rollout_batch(mdp, random_policy(mdp, 0), 0, 2**63, np.random.default_rng(0))


def test_batch_handles_astronomical_counts():
    mdp = rt()
    b = rollout_batch(mdp, random_policy(mdp, 0), 2, 10**17, np.random.default_rng(0))
    assert b.counts.sum() == 10**17
    assert np.all(b.reward_sums >= 0)


# -- feature expectations --------------------------------------------------------


def test_exact_feature_expectation_point_mass():
    mdp = rt()
    init = np.zeros(mdp.num_states)
    init[2] = 1.0
    pm = DeterministicMdp(mdp.transition, mdp.features, mdp.reward_params, init)
    pi = random_policy(mdp, 4)
    a = pi.actions(pm, 0, np.array([2]))[0]
    np.testing.assert_allclose(exact_feature_expectation(pm, 0, pi), mdp.features[0, 2, a])
    np.testing.assert_allclose(vec_eval(pm, 0, pi, 7, np.random.default_rng(0)), mdp.features[0, 2, a], atol=1e-15)


def test_exact_feature_expectation_two_state_mixture():
    mdp = rt(S=2, A=2, H=2)
    pi = random_policy(mdp, 5)
    acts = pi.actions(mdp, 0, np.array([0, 1]))
    expected = 0.5 * (mdp.features[0, 0, acts[0]] + mdp.features[0, 1, acts[1]])
    np.testing.assert_allclose(exact_feature_expectation(mdp, 0, pi), expected)
    n = 10**4
    est = vec_eval(mdp, 0, pi, n, np.random.default_rng(1))
    assert np.linalg.norm(est - expected) <= 5 / np.sqrt(n)


def test_vec_eval_matches_oracle_within_standard_errors():
    mdp = rt(S=5, A=3, H=3, seed=2)
    pi = random_policy(mdp, 6)
    n = 10**5
    exact = exact_feature_expectation(mdp, 2, pi)
    est = vec_eval(mdp, 2, pi, n, np.random.default_rng(2))
    assert np.linalg.norm(est - exact) <= 4 / np.sqrt(n)


def test_vec_eval_concentration():
    mdp = rt(S=5, A=2, H=2, seed=4)
    pi = random_policy(mdp, 7)
    exact = exact_feature_expectation(mdp, 1, pi)
    rng = np.random.default_rng(3)
    n = 400
    misses = sum(np.linalg.norm(vec_eval(mdp, 1, pi, n, rng) - exact) > 2 / np.sqrt(n) for _ in range(200))
    assert misses <= 20


# -- Monte Carlo values -------------------------------------------------------------


def test_mc_value_noiseless_is_exact():
    mdp = rt(S=1, A=2, H=3, noise=0.0)
    pi = random_policy(mdp, 8)
    assert mc_policy_value(mdp, pi, 13, np.random.default_rng(0)) == pytest.approx(exact_policy_value(mdp, pi), abs=1e-12)


def test_mc_value_hoeffding_band():
    mdp = rt(seed=5)
    pi = random_policy(mdp, 9)
    n = 10**4
    est = mc_policy_value(mdp, pi, n, np.random.default_rng(4))
    assert abs(est - exact_policy_value(mdp, pi)) <= 3 * mdp.H / (2 * np.sqrt(n))


def test_mc_value_variance_single_trajectory():
    """One start state, pure Bernoulli rewards: variance is the sum of p(1-p)."""
    mdp = rt(S=1, A=2, H=3, seed=6, noise=0.5)
    pi = random_policy(mdp, 10)
    means = []
    cur = 0
    for h in range(3):
        a = int(pi.actions(mdp, h, np.array([cur]))[0])
        means.append(mdp.reward_means[h, cur, a])
        cur = mdp.transition[h, cur, a] if h < 2 else cur
    var = sum(p * (1 - p) for p in means)
    rng = np.random.default_rng(5)
    samples = np.array([mc_policy_value(mdp, pi, 1, rng) for _ in range(20000)])
    assert samples.var() == pytest.approx(var, rel=0.05)


def test_mc_value_unbiased():
    mdp = rt(seed=7)
    pi = random_policy(mdp, 11)
    rng = np.random.default_rng(6)
    runs = np.array([mc_policy_value(mdp, pi, 50, rng) for _ in range(200)])
    se = runs.std(ddof=1) / np.sqrt(len(runs))
    assert abs(runs.mean() - exact_policy_value(mdp, pi)) <= 3 * se
