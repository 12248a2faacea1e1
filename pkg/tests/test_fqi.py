import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbcrl.env import (
    DeterministicMdp,
    EnvSpec,
    LinearReward,
    TabularPolicy,
    dp_optimal,
    make_hidden_subspace,
    make_rotated_tabular,
    policy_paths,
)
from lbcrl.fqi import FqiTrace, LinearGreedyPolicy, argmax_action, fqi


def rt(S=4, A=2, H=3, seed=0, noise=0.0):
    return make_rotated_tabular(EnvSpec("rotated_tabular", S * A, H, S, A, seed, noise))


def full_cover(mdp, layers):
    """Open-loop action sequences; from a uniform start they reach every reachable pair."""
    out = []
    for l in range(layers):
        seqs = itertools.product(range(mdp.num_actions), repeat=l + 1)
        out.append([TabularPolicy(np.repeat(np.array(seq)[:, None], mdp.num_states, 1)) for seq in seqs])
    return out


def per_state_values(mdp, policy, rewards):
    table = np.zeros((mdp.H, mdp.num_states, mdp.num_actions))
    tab = rewards.table(mdp)
    table[: tab.shape[0]] = tab
    states, acts = policy_paths(mdp, policy, np.arange(mdp.num_states), policy.num_layers - 1)
    return table[np.arange(policy.num_layers)[None, :], states, acts].sum(axis=1)


def test_argmax_zero_theta_is_action_zero():
    mdp = rt()
    assert argmax_action(np.zeros(mdp.d), mdp, 0, 1) == 0


def test_argmax_aligned_theta():
    mdp = rt(A=3, S=2)
    assert argmax_action(mdp.features[1, 1, 2], mdp, 1, 1) == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_argmax_matches_brute_force(seed):
    mdp = rt(S=3, A=4, H=2, seed=seed % 50)
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=mdp.d)
    h, x = int(rng.integers(2)), int(rng.integers(3))
    scores = [float(mdp.features[h, x, a] @ theta) for a in range(4)]
    best = max(scores)
    assert argmax_action(theta, mdp, h, x) == scores.index(best)


def test_greedy_policy_rejects_undefined_layer():
    mdp = rt()
    pi = LinearGreedyPolicy(np.zeros((1, mdp.d)))
    with pytest.raises(ValueError):
        pi.actions(mdp, 1, np.array([0]))


def test_fqi_single_layer_is_reward_greedy():
    mdp = rt()
    w = np.random.default_rng(0).normal(size=mdp.d)
    pi = fqi(mdp, 0, LinearReward.single_layer(mdp.d, 0, w), [], 5, np.random.default_rng(0))
    np.testing.assert_array_equal(pi.thetas, [w])


def test_fqi_empty_cover_gives_zero_parameters():
    mdp = rt()
    pi = fqi(mdp, 2, LinearReward(mdp.reward_params), [[], []], 5, np.random.default_rng(0))
    np.testing.assert_array_equal(pi.thetas[:2], 0)


@pytest.mark.parametrize("seed", range(5))
def test_fqi_full_cover_is_optimal_per_state(seed):
    mdp = rt(S=4, A=3, H=3, seed=seed)
    rew = LinearReward(mdp.reward_params)
    pi = fqi(mdp, mdp.H - 1, rew, full_cover(mdp, mdp.H - 1), 50, np.random.default_rng(seed))
    V, _ = dp_optimal(mdp)
    np.testing.assert_allclose(per_state_values(mdp, pi, rew), V[0], atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_fqi_layer_reward_maximised_against_brute_force(seed):
    mdp = rt(S=4, A=4, H=4, seed=seed)
    rng = np.random.default_rng(seed)
    h = 3
    w = rng.normal(size=mdp.d)
    rew = LinearReward.single_layer(mdp.d, h, w)
    pi = fqi(mdp, h, rew, full_cover(mdp, h), 20, rng)
    achieved = per_state_values(mdp, pi, rew)
    best = np.full(mdp.num_states, -np.inf)
    for seq in itertools.product(range(4), repeat=h + 1):
        cur = np.arange(mdp.num_states)
        for l, a in enumerate(seq[:-1]):
            cur = mdp.transition[l, cur, a]
        best = np.maximum(best, mdp.features[h, cur, seq[-1]] @ w)
    np.testing.assert_allclose(achieved, best, atol=1e-9)


def test_fqi_interpolates_training_targets():
    mdp = rt(S=4, A=2, H=3, seed=1)
    trace = FqiTrace([], [], [])
    pi = fqi(mdp, 2, LinearReward(mdp.reward_params), full_cover(mdp, 2), 9, np.random.default_rng(0), trace=trace)
    for layer, (F, Y) in enumerate(zip(trace.features, trace.targets)):
        np.testing.assert_allclose(F @ pi.thetas[layer], Y, atol=1e-9)


def test_fqi_is_deterministic_given_seed():
    mdp = rt(noise=0.5)
    args = (mdp, 2, LinearReward(mdp.reward_params), full_cover(mdp, 2), 30)
    a = fqi(*args, np.random.default_rng(4)).thetas
    b = fqi(*args, np.random.default_rng(4)).thetas
    np.testing.assert_array_equal(a, b)


def test_fqi_planted_cover_optimal_inside_hidden_states():
    """Cover built from hidden starts only: optimal there, no claim elsewhere."""
    mdp = make_hidden_subspace(EnvSpec("hidden_subspace", 16, 3, 4, 2, 3, 0.0, 0.5))
    hidden = np.arange(2)
    init = np.zeros(mdp.num_states)
    init[hidden] = 0.5
    inside = DeterministicMdp(mdp.transition, mdp.features, mdp.reward_params, init)
    rew = LinearReward(mdp.reward_params)
    pi = fqi(inside, 2, rew, full_cover(inside, 2), 10, np.random.default_rng(0))
    V, _ = dp_optimal(mdp)
    np.testing.assert_allclose(per_state_values(mdp, pi, rew)[hidden], V[0, hidden], atol=1e-9)
