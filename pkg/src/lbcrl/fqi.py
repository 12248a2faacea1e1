"""Fitted Q-iteration with minimum-norm least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import DeterministicMdp, LinearReward
from .linalg import SV_CUTOFF, min_norm_lstsq
from .rollout import rollout_batch


def argmax_action(theta, mdp: DeterministicMdp, h: int, x: int) -> int:
    """Action maximising ``phi_h(x, a)^T theta``; ties go to the lowest index."""
    return int(np.argmax(mdp.features[h, x] @ np.asarray(theta, dtype=float)))


@dataclass(frozen=True)
class LinearGreedyPolicy:
    """Greedy policy on per-layer linear scores ``theta_l^T phi_l(x, a)``."""

    thetas: np.ndarray

    def __post_init__(self):
        t = np.array(self.thetas, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "thetas", t)

    @property
    def num_layers(self) -> int:
        return self.thetas.shape[0]

    def actions(self, mdp, h, states):
        if h >= self.num_layers:
            raise ValueError(f"policy is defined for layers < {self.num_layers}, asked for layer {h}")
        scores = mdp.features[h, np.asarray(states)] @ self.thetas[h]
        return np.argmax(scores, axis=-1)


@dataclass
class FqiTrace:
    """Regression data per layer, kept for diagnostics and tests."""

    features: list
    targets: list
    weights: list


def fqi(
    mdp: DeterministicMdp,
    h: int,
    rewards: LinearReward,
    cover,
    n: int,
    rng: np.random.Generator,
    sv_cutoff: float = SV_CUTOFF,
    trace: FqiTrace | None = None,
) -> LinearGreedyPolicy:
    """Backward regression of Bellman targets onto features.

    ``cover[l]`` lists the roll-in policies for layer ``l < h``. Layer ``h``
    uses the reward parameter directly; an empty cover gives ``theta_l = 0``.
    """
    if not 0 <= h < mdp.H:
        raise ValueError(f"target layer {h} out of range")
    d = mdp.d
    thetas = np.zeros((h + 1, d))
    if h < rewards.params.shape[0]:
        thetas[h] = rewards.params[h]
    for layer in range(h - 1, -1, -1):
        policies = list(cover[layer]) if layer < len(cover) else []
        feats, ys, ws = [], [], []
        r = rewards.params[layer] if layer < rewards.params.shape[0] else np.zeros(d)
        for pi in policies:
            batch = rollout_batch(mdp, pi, layer, n, rng, sample_rewards=False)
            s, a = batch.states[:, layer], batch.actions[:, layer]
            nxt = mdp.transition[layer, s, a]
            phi = mdp.features[layer, s, a]
            y = phi @ r + np.max(mdp.features[layer + 1, nxt] @ thetas[layer + 1], axis=-1)
            feats.append(phi)
            ys.append(y)
            ws.append(batch.counts)
        if feats:
            F, Y, Wt = np.vstack(feats), np.concatenate(ys), np.concatenate(ws)
            thetas[layer] = min_norm_lstsq(F, Y, sv_cutoff, weights=Wt)
            if trace is not None:
                trace.features.insert(0, F)
                trace.targets.insert(0, Y)
                trace.weights.insert(0, Wt)
    return LinearGreedyPolicy(thetas)
