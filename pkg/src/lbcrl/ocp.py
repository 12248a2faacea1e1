"""Optimistic constraint propagation for deterministic linear rewards."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import DeterministicMdp, LinearReward
from .linalg import ConstraintSet, Infeasible, lp_max_linear, lp_min_max
from .rollout import mc_policy_value

WIDEN = 1e-6

__all__ = ["LinearReward", "OptimisticPolicy", "OcpResult", "initial_constraints", "optimistic_value", "ocp_run"]


def initial_constraints(mdp: DeterministicMdp, q_bound: float, layers: int | None = None) -> list[ConstraintSet]:
    """Per-layer class ``{theta : |phi_h(x, a)^T theta| <= q_bound for all (x, a)}``.

    The ball radius is chosen large enough to be implied by the slabs on the
    span of the layer's features, so it only bounds the irrelevant
    orthogonal component.
    """
    layers = mdp.H if layers is None else layers
    out = []
    for h in range(layers):
        phi = mdp.features[h].reshape(-1, mdp.d)
        nz = phi[np.linalg.norm(phi, axis=1) > 0]
        s = np.linalg.svd(nz, compute_uv=False) if len(nz) else np.zeros(0)
        s_min = s[s > 1e-10 * s[0]].min() if s.size and s[0] > 0 else 1.0
        c = ConstraintSet(mdp.d, q_bound * np.sqrt(max(len(nz), 1)) / s_min)
        for g in nz:
            n = np.linalg.norm(g)
            c = c.intersect(g / n, -q_bound / n, q_bound / n)
        out.append(c)
    return out


@dataclass(frozen=True)
class OptimisticPolicy:
    """Acts greedily on ``sup_{theta in C_h} theta^T phi_h(x, a)``."""

    constraints: tuple

    def actions(self, mdp, h, states):
        return np.array([optimistic_value(self.constraints, mdp, h, int(x))[0] for x in np.asarray(states)], dtype=int)


def optimistic_value(constraints, mdp: DeterministicMdp, h: int, x: int) -> tuple[int, float]:
    """Best action at ``(h, x)`` by optimistic value, lowest index on ties."""
    vals = [lp_max_linear(constraints[h], mdp.features[h, x, a])[0] for a in range(mdp.num_actions)]
    a = int(np.argmax(vals))
    return a, float(vals[a])


@dataclass
class OcpResult:
    policy: OptimisticPolicy
    episode_policies: list
    episode_values: list
    constraints: list
    visited: list = field(default_factory=list)


def ocp_run(
    mdp: DeterministicMdp,
    rewards: LinearReward,
    R: float,
    T: int,
    rng: np.random.Generator,
    horizon: int | None = None,
    widen: float = WIDEN,
    detailed: bool = False,
):
    """Run ``T`` optimistic episodes, then return the best episode policy.

    Each episode picks actions optimistically, brackets the Bellman target at
    the visited pair between its infimum and supremum over the next layer's
    constraint set, and intersects that (widened) interval into the current
    layer's set. All ``T`` episode policies are then scored by Monte Carlo
    with ``T`` rollouts each; the first best score wins.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if R <= 0:
        raise ValueError("reward bound R must be positive")
    H = mdp.H if horizon is None else horizon
    rewards.check(mdp)
    table = np.zeros((H, mdp.num_states, mdp.num_actions))
    tab = rewards.table(mdp)[:H]
    table[: tab.shape[0]] = tab
    sets = initial_constraints(mdp, mdp.H * R, H)
    snapshots: list[OptimisticPolicy] = []
    visited = []
    starts = rng.choice(mdp.num_states, size=T, p=mdp.initial_dist)
    for j in range(T):
        snap = OptimisticPolicy(tuple(sets))
        snapshots.append(snap)
        x = int(starts[j])
        for h in range(H):
            a, _ = optimistic_value(snap.constraints, mdp, h, x)
            r = float(table[h, x, a])
            if h < H - 1:
                nxt = int(mdp.transition[h, x, a])
                phis = mdp.features[h + 1, nxt]
                upper = r + max(lp_max_linear(snap.constraints[h + 1], p)[0] for p in phis)
                lower = r + lp_min_max(snap.constraints[h + 1], phis)
            else:
                nxt = None
                upper = lower = r
            g = mdp.features[h, x, a]
            norm = np.linalg.norm(g)
            if norm > 0:
                try:
                    sets[h] = sets[h].intersect(g / norm, (lower - widen) / norm, (upper + widen) / norm)
                except Infeasible as exc:
                    raise Infeasible(f"episode {j}, layer {h}: constraint set became empty ({exc})") from exc
            visited.append((j, h, x, a, lower, upper))
            if nxt is not None:
                x = nxt
    horizon_mdp = mdp if H == mdp.H else _truncated(mdp, H)
    values = [mc_policy_value(horizon_mdp, pi, T, rng, rewards=_clip_reward(rewards, H)) for pi in snapshots]
    best = 0
    for j in range(1, T):
        if values[best] < values[j]:
            best = j
    result = OcpResult(snapshots[best], snapshots, values, sets, visited)
    return result if detailed else result.policy


def _clip_reward(rewards: LinearReward, H: int) -> LinearReward:
    return LinearReward(rewards.params[:H], rewards.bound)


def _truncated(mdp: DeterministicMdp, H: int) -> DeterministicMdp:
    return DeterministicMdp(
        mdp.transition[:H], mdp.features[:H], mdp.reward_params[:H], mdp.initial_dist, mdp.noise_model, mdp.noise_scale
    )
