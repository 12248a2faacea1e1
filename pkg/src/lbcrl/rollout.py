"""Trajectory sampling, feature-expectation estimates and Monte Carlo values.

Transitions and the policies used here are deterministic, so a trajectory is
fixed by its start state; only the start state and the realised rewards are
random. :func:`rollout_batch` exploits this: ``n`` independent rollouts are
drawn as a multinomial count over start states plus, per visited pair, the
sum of the realised rewards. This has exactly the law of ``n`` i.i.d.
trajectories and keeps very large sample sizes cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import DeterministicMdp, LinearReward, policy_paths

_MAX_COUNT = 2**62


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    Each stream keys an independent Philox generator; ``child`` derives a
    new stream id so that sub-tasks get reproducible, non-overlapping draws.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed % 2**64, self.stream_id % 2**64]))

    def child(self, label: int) -> "RngStream":
        mixed = np.random.SeedSequence([self.seed % 2**64, self.stream_id % 2**64, int(label)]).generate_state(
            2, np.uint64
        )
        return RngStream(self.seed, int(mixed[0]))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def sample_trajectory(mdp: DeterministicMdp, policy, up_to_h: int, rng: np.random.Generator) -> Trajectory:
    """Roll out one trajectory through layer ``up_to_h`` (inclusive)."""
    if not 0 <= up_to_h < mdp.H:
        raise ValueError(f"up_to_h must lie in [0, {mdp.H - 1}]")
    x = int(rng.choice(mdp.num_states, p=mdp.initial_dist))
    states, acts, rews, feats = [], [], [], []
    for h in range(up_to_h + 1):
        a = int(np.asarray(policy.actions(mdp, h, np.array([x])))[0])
        if not 0 <= a < mdp.num_actions:
            raise ValueError(f"policy returned invalid action {a} at layer {h}")
        states.append(x)
        acts.append(a)
        rews.append(float(mdp.sample_reward_sums(h, [x], [a], [1], rng)[0]))
        feats.append(mdp.features[h, x, a])
        if h < mdp.H - 1:
            x = int(mdp.transition[h, x, a])
    return Trajectory(np.array(states), np.array(acts), np.array(rews), np.array(feats))


@dataclass(frozen=True)
class RolloutBatch:
    """Sufficient statistics of ``n`` rollouts through layer ``up_to``.

    ``counts[i]`` rollouts started at ``starts[i]`` and followed
    ``states[i]``/``actions[i]``; ``reward_sums[i, h]`` is the total reward
    those rollouts collected at layer ``h``.
    """

    n: int
    starts: np.ndarray
    counts: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    reward_sums: np.ndarray

    def features(self, mdp: DeterministicMdp, h: int) -> np.ndarray:
        return mdp.features[h, self.states[:, h], self.actions[:, h]]


def _check_n(n) -> int:
    n = int(n)
    if n < 1:
        raise ValueError("sample count must be at least 1")
    if n > _MAX_COUNT:
        raise ValueError(f"sample count {n} exceeds the supported maximum {_MAX_COUNT}")
    return n


def draw_start_counts(mdp: DeterministicMdp, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    starts = mdp.start_support()
    p = mdp.initial_dist[starts]
    return starts, rng.multinomial(n, p / p.sum())


def rollout_batch(
    mdp: DeterministicMdp,
    policy,
    up_to: int,
    n: int,
    rng: np.random.Generator,
    rewards: LinearReward | None = None,
    sample_rewards: bool = True,
) -> RolloutBatch:
    """Draw ``n`` rollouts through layer ``up_to`` as sufficient statistics.

    Rewards are the environment's noisy rewards, or the deterministic
    ``rewards`` when given. ``sample_rewards=False`` skips reward draws.
    """
    n = _check_n(n)
    starts, counts = draw_start_counts(mdp, n, rng)
    keep = counts > 0
    starts, counts = starts[keep], counts[keep]
    states, acts = policy_paths(mdp, policy, starts, up_to)
    sums = np.zeros(states.shape)
    if rewards is not None:
        for h in range(up_to + 1):
            sums[:, h] = counts * rewards.value(mdp, h, states[:, h], acts[:, h])
    elif sample_rewards:
        for h in range(up_to + 1):
            sums[:, h] = mdp.sample_reward_sums(h, states[:, h], acts[:, h], counts, rng)
    return RolloutBatch(n, starts, counts, states, acts, sums)


def vec_eval(mdp: DeterministicMdp, h: int, policy, n: int, rng: np.random.Generator) -> np.ndarray:
    """Average of ``phi_h(x_h, a_h)`` over ``n`` fresh rollouts."""
    batch = rollout_batch(mdp, policy, h, n, rng, sample_rewards=False)
    return batch.counts @ batch.features(mdp, h) / batch.n


def mc_policy_value(
    mdp: DeterministicMdp, policy, n: int, rng: np.random.Generator, rewards: LinearReward | None = None
) -> float:
    """Mean total reward over ``n`` rollouts."""
    batch = rollout_batch(mdp, policy, mdp.H - 1, n, rng, rewards=rewards)
    return float(batch.reward_sums.sum() / batch.n)


def exact_feature_expectation(mdp: DeterministicMdp, h: int, policy) -> np.ndarray:
    """``E[phi_h(x_h, a_h)]`` by enumeration over start states."""
    starts = mdp.start_support()
    states, acts = policy_paths(mdp, policy, starts, h)
    return mdp.initial_dist[starts] @ mdp.features[h, states[:, h], acts[:, h]]
