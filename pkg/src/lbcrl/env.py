"""Deterministic-transition MDPs, synthetic generators and exact oracles.

Layers are zero-based throughout the package: ``h = 0, ..., H-1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Protocol

import numpy as np

from .linalg import Subspace, min_norm_lstsq, orthonormal_basis

KINDS = ("rotated_tabular", "hidden_subspace")
NOISE_MODELS = ("bernoulli", "gaussian")


# ---------------------------------------------------------------------------
# Environment specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "rotated_tabular"
    d: int = 8
    H: int = 2
    num_states: int = 4
    num_actions: int = 2
    seed: int = 0
    reward_noise_scale: float = 0.5
    hidden_fraction: float = 0.0

    def validate(self) -> "EnvSpec":
        if self.kind not in KINDS:
            raise ValueError(f"unknown env kind {self.kind!r}; expected one of {KINDS}")
        for name in ("d", "H", "num_states", "num_actions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 <= self.reward_noise_scale <= 0.5:
            raise ValueError("reward_noise_scale must lie in [0, 0.5]")
        if not 0.0 <= self.hidden_fraction <= 1.0:
            raise ValueError("hidden_fraction must lie in [0, 1]")
        pairs = self.num_states * self.num_actions
        if self.kind == "rotated_tabular" and self.d != pairs:
            raise ValueError(f"rotated_tabular needs d = num_states*num_actions = {pairs}, got {self.d}")
        if self.kind == "hidden_subspace":
            if self.d < pairs:
                raise ValueError(f"hidden_subspace needs d >= num_states*num_actions = {pairs}")
            if self.num_states < 2 and self.hidden_fraction < 1.0:
                raise ValueError("hidden_subspace with exiting mass needs at least 2 states")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n".replace("'", "") for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "EnvSpec":
        types = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kind = types[key]
            try:
                values[key] = val if kind == "str" else int(val) if kind == "int" else float(val)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        return cls(**values).validate()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> "EnvSpec":
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# MDP
# ---------------------------------------------------------------------------


class Policy(Protocol):
    def actions(self, mdp: "DeterministicMdp", h: int, states: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class DeterministicMdp:
    """Finite MDP with deterministic transitions and linear reward means.

    ``transition[h, x, a]`` is the next state, ``features[h, x, a]`` the
    d-dimensional feature and ``reward_params[h]`` the mean-reward vector.
    Realised rewards follow ``noise_model``: with ``bernoulli`` the reward is
    ``Bernoulli(mean)`` with probability ``2*noise_scale`` and the mean
    otherwise; with ``gaussian`` it is the mean plus ``noise_scale * N(0,1)``
    clipped symmetrically so that it stays in [0, 1].
    """

    transition: np.ndarray
    features: np.ndarray
    reward_params: np.ndarray
    initial_dist: np.ndarray
    noise_model: str = "bernoulli"
    noise_scale: float = 0.0
    planted: tuple | None = None
    spec: EnvSpec | None = None
    _means: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("transition", "features", "reward_params", "initial_dist"):
            arr = np.array(getattr(self, name), dtype=int if name == "transition" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        H, S, A, d = self.features.shape
        if self.transition.shape != (H, S, A):
            raise ValueError("transition table shape must be (H, S, A)")
        if self.reward_params.shape != (H, d):
            raise ValueError("reward_params shape must be (H, d)")
        if self.initial_dist.shape != (S,) or abs(self.initial_dist.sum() - 1.0) > 1e-12 or np.any(self.initial_dist < 0):
            raise ValueError("initial_dist must be a probability vector over states")
        if np.any((self.transition < 0) | (self.transition >= S)):
            raise ValueError("transition targets must be valid state ids")
        if np.max(np.linalg.norm(self.features, axis=-1)) > 1 + 1e-12:
            raise ValueError("feature norms must be at most 1")
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"noise_model must be one of {NOISE_MODELS}")
        means = np.einsum("hsad,hd->hsa", self.features, self.reward_params)
        if np.any(means < -1e-12) or np.any(means > 1 + 1e-12):
            raise ValueError("reward means must lie in [0, 1]")
        means = np.clip(means, 0.0, 1.0)
        means.setflags(write=False)
        object.__setattr__(self, "_means", means)

    @property
    def H(self) -> int:
        return self.features.shape[0]

    @property
    def num_states(self) -> int:
        return self.features.shape[1]

    @property
    def num_actions(self) -> int:
        return self.features.shape[2]

    @property
    def d(self) -> int:
        return self.features.shape[3]

    @property
    def reward_means(self) -> np.ndarray:
        """Mean rewards, shape ``(H, S, A)``."""
        return self._means

    def start_support(self) -> np.ndarray:
        return np.flatnonzero(self.initial_dist > 0)

    def sample_reward_sums(self, h: int, states, actions, counts, rng: np.random.Generator) -> np.ndarray:
        """Sum of ``counts[i]`` independent realised rewards at ``(states[i], actions[i])``."""
        mean = self._means[h, np.asarray(states), np.asarray(actions)]
        counts = np.asarray(counts, dtype=np.int64)
        s = self.noise_scale
        if s == 0.0:
            return counts * mean
        if self.noise_model == "bernoulli":
            noisy = rng.binomial(counts, min(1.0, 2.0 * s))
            hits = rng.binomial(noisy, mean)
            return hits + (counts - noisy) * mean
        out = np.empty(len(counts))
        for i, (m, c) in enumerate(zip(mean, counts)):
            half = min(m, 1.0 - m)
            out[i] = c * m + np.clip(s * rng.standard_normal(int(c)), -half, half).sum()
        return out


@dataclass(frozen=True)
class LinearReward:
    """Deterministic reward ``r_h(x, a) = params[h]^T phi_h(x, a)``."""

    params: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        p = np.array(self.params, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    def check(self, mdp: DeterministicMdp) -> "LinearReward":
        if self.params.shape[1] != mdp.d or self.params.shape[0] > mdp.H:
            raise ValueError("reward parameters do not match the environment")
        if self.bound is not None:
            worst = float(np.max(np.abs(self.table(mdp)))) if self.params.size else 0.0
            if worst > self.bound * (1 + 1e-9) + 1e-12:
                raise ValueError(f"reward magnitude {worst} exceeds the declared bound {self.bound}")
        return self

    def table(self, mdp: DeterministicMdp) -> np.ndarray:
        """Reward table of shape ``(len(params), S, A)``."""
        L = self.params.shape[0]
        return np.einsum("hsad,hd->hsa", mdp.features[:L], self.params)

    def value(self, mdp: DeterministicMdp, h: int, states, actions) -> np.ndarray:
        if h >= self.params.shape[0]:
            return np.zeros(np.shape(states))
        return mdp.features[h, states, actions] @ self.params[h]

    @classmethod
    def single_layer(cls, d: int, h: int, w, bound: float | None = None) -> "LinearReward":
        params = np.zeros((h + 1, d))
        params[h] = w
        return cls(params, bound)


@dataclass(frozen=True)
class TabularPolicy:
    """Policy given by an explicit ``(layers, S)`` action table."""

    table: np.ndarray

    def actions(self, mdp, h, states):
        return np.asarray(self.table)[h, np.asarray(states)]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _encode_rewards(embed: np.ndarray, means: np.ndarray, d: int) -> np.ndarray:
    w = embed @ means
    norm = np.linalg.norm(w)
    if norm > np.sqrt(d):
        # Shrink toward 1/2 until the norm bound holds; means stay in [0, 1].
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(embed @ (0.5 + mid * (means - 0.5))) <= np.sqrt(d):
                lo = mid
            else:
                hi = mid
        w = embed @ (0.5 + lo * (means - 0.5))
    return w


def _tabular_features(rng, H, S, A, d):
    feats = np.empty((H, S, A, d))
    embeds = []
    for h in range(H):
        E = _orthogonal(rng, d)[:, : S * A]
        embeds.append(E)
        feats[h] = E.T.reshape(S, A, d)
    return feats, embeds


def _noise_of(spec: EnvSpec) -> tuple[str, float]:
    return "bernoulli", float(spec.reward_noise_scale)


def make_rotated_tabular(spec: EnvSpec) -> DeterministicMdp:
    """One-hot state-action features under a random orthogonal rotation per layer."""
    spec.validate()
    if spec.kind != "rotated_tabular":
        raise ValueError("spec.kind must be rotated_tabular")
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, 0x7AB]))
    H, S, A, d = spec.H, spec.num_states, spec.num_actions, spec.d
    transition = rng.integers(0, S, size=(H, S, A))
    feats, embeds = _tabular_features(rng, H, S, A, d)
    params = np.stack([_encode_rewards(embeds[h], rng.uniform(0.1, 0.9, S * A), d) for h in range(H)])
    noise, scale = _noise_of(spec)
    return DeterministicMdp(transition, feats, params, np.full(S, 1.0 / S), noise, scale, None, spec)


def make_hidden_subspace(spec: EnvSpec) -> DeterministicMdp:
    """Tabular features embedded in R^d with a planted closed set of states.

    The first ``max(1, S // 2)`` states are *hidden*: they only transition among
    themselves, so trajectories started there keep their features inside the
    span of the hidden state-action embeddings. The remaining *exit* states
    transition among themselves. The initial distribution puts mass
    ``hidden_fraction`` uniformly on hidden states and the rest uniformly on
    exit states. ``planted[h]`` is the span reachable from hidden starts.
    """
    spec.validate()
    if spec.kind != "hidden_subspace":
        raise ValueError("spec.kind must be hidden_subspace")
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, 0x41D]))
    H, S, A, d = spec.H, spec.num_states, spec.num_actions, spec.d
    n_hidden = max(1, S // 2)
    n_exit = S - n_hidden
    transition = np.empty((H, S, A), dtype=int)
    transition[:, :n_hidden] = rng.integers(0, n_hidden, size=(H, n_hidden, A))
    if n_exit:
        transition[:, n_hidden:] = rng.integers(n_hidden, S, size=(H, n_exit, A))
    feats, embeds = _tabular_features(rng, H, S, A, d)
    params = np.stack([_encode_rewards(embeds[h], rng.uniform(0.1, 0.9, S * A), d) for h in range(H)])
    init = np.zeros(S)
    f = spec.hidden_fraction if n_exit else 1.0
    init[:n_hidden] = f / n_hidden
    if n_exit:
        init[n_hidden:] = (1.0 - f) / n_exit
    init /= init.sum()
    noise, scale = _noise_of(spec)
    hidden_mdp = DeterministicMdp(transition, feats, params, np.eye(S)[0], noise, scale)
    planted = tuple(
        reachable_feature_span(hidden_mdp, h, starts=np.arange(n_hidden)).basis for h in range(H)
    )
    return DeterministicMdp(transition, feats, params, init, noise, scale, planted, spec)


def make_env(spec: EnvSpec) -> DeterministicMdp:
    if spec.kind == "rotated_tabular":
        return make_rotated_tabular(spec)
    if spec.kind == "hidden_subspace":
        return make_hidden_subspace(spec)
    raise ValueError(f"unknown env kind {spec.kind!r}")


def truncate_features(mdp: DeterministicMdp, keep: int) -> DeterministicMdp:
    """Copy of ``mdp`` that keeps only the first ``keep`` feature coordinates.

    Rewards are re-fit by least squares on the truncated features and clipped
    to valid means; used as a negative control for completeness checks.
    """
    feats = mdp.features[..., :keep]
    params = np.stack(
        [min_norm_lstsq(feats[h].reshape(-1, keep), mdp.reward_means[h].reshape(-1)) for h in range(mdp.H)]
    )
    means = np.einsum("hsad,hd->hsa", feats, params)
    if np.any(means < 0) or np.any(means > 1):
        params *= 0.0
    return DeterministicMdp(mdp.transition, feats, params, mdp.initial_dist, mdp.noise_model, mdp.noise_scale)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def reachable_states(mdp: DeterministicMdp, starts=None) -> list[np.ndarray]:
    """States reachable at each layer under some policy."""
    cur = mdp.start_support() if starts is None else np.unique(np.asarray(starts))
    out = [cur]
    for h in range(mdp.H - 1):
        cur = np.unique(mdp.transition[h, cur].reshape(-1))
        out.append(cur)
    return out


def reachable_feature_span(mdp: DeterministicMdp, h: int, starts=None, tol: float = 1e-8) -> Subspace:
    states = reachable_states(mdp, starts)[h]
    return orthonormal_basis(mdp.features[h, states].reshape(-1, mdp.d), tol=tol, d=mdp.d)


def verify_lbc(mdp: DeterministicMdp, num_probes: int = 20, tol: float = 1e-9, rng=None) -> float:
    """Largest residual when fitting Bellman backups of random linear functions.

    For each probe ``theta`` (uniform in the unit ball, rescaled so that
    ``max |phi_{h+1}^T theta| = 1``) the backup ``max_a' phi_{h+1}(x', a')^T theta``
    at every ``(x, a)`` is regressed on ``phi_h``. ``tol`` is informational:
    a return value at most ``tol`` certifies completeness numerically.
    """
    if num_probes < 1:
        raise ValueError("num_probes must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    d = mdp.d
    for h in range(mdp.H - 1):
        phi = mdp.features[h].reshape(-1, d)
        nxt = mdp.transition[h].reshape(-1)
        for _ in range(num_probes):
            theta = rng.standard_normal(d)
            theta *= rng.uniform() ** (1.0 / d) / np.linalg.norm(theta)
            scale = np.max(np.abs(mdp.features[h + 1] @ theta))
            if scale > 0:
                theta /= scale
            backup = np.max(mdp.features[h + 1, nxt] @ theta, axis=-1)
            fit = min_norm_lstsq(phi, backup)
            worst = max(worst, float(np.max(np.abs(phi @ fit - backup))))
    return worst


def dp_optimal(mdp: DeterministicMdp, rewards: LinearReward | None = None):
    """Exact optimal values ``V[h, x]`` and greedy actions ``A[h, x]`` (lowest index on ties).

    Uses the environment's mean rewards unless a deterministic linear reward
    is supplied; layers beyond the reward's length then contribute zero.
    """
    H, S = mdp.H, mdp.num_states
    table = mdp.reward_means if rewards is None else _padded_table(mdp, rewards)
    V = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        nxt = V[h + 1, mdp.transition[h]] if h < H - 1 else 0.0
        Q = table[h] + nxt
        greedy[h] = np.argmax(Q, axis=1)
        V[h] = Q[np.arange(S), greedy[h]]
    return V[:H], greedy


def _padded_table(mdp, rewards: LinearReward) -> np.ndarray:
    table = np.zeros((mdp.H, mdp.num_states, mdp.num_actions))
    tab = rewards.table(mdp)
    table[: tab.shape[0]] = tab
    return table


def policy_paths(mdp: DeterministicMdp, policy, starts, up_to: int | None = None):
    """Deterministic state and action sequences from each start through layer ``up_to``."""
    up_to = mdp.H - 1 if up_to is None else up_to
    starts = np.asarray(starts, dtype=int)
    states = np.empty((len(starts), up_to + 1), dtype=int)
    acts = np.empty_like(states)
    cur = starts
    for h in range(up_to + 1):
        states[:, h] = cur
        a = np.asarray(policy.actions(mdp, h, cur), dtype=int)
        if a.shape != cur.shape or np.any((a < 0) | (a >= mdp.num_actions)):
            raise ValueError(f"policy returned invalid actions at layer {h}")
        acts[:, h] = a
        if h < mdp.H - 1:
            cur = mdp.transition[h, cur, a]
    return states, acts


def exact_policy_value(mdp: DeterministicMdp, policy, rewards: LinearReward | None = None) -> float:
    """``E[sum_h r_h]`` under the initial distribution, computed by enumeration."""
    starts = mdp.start_support()
    states, acts = policy_paths(mdp, policy, starts)
    table = mdp.reward_means if rewards is None else _padded_table(mdp, rewards)
    per_start = table[np.arange(mdp.H)[None, :], states, acts].sum(axis=1)
    return float(mdp.initial_dist[starts] @ per_start)


def brute_force_values(mdp: DeterministicMdp, rewards: LinearReward | None = None) -> np.ndarray:
    """Optimal value per start state by enumerating all ``A**H`` action sequences."""
    table = mdp.reward_means if rewards is None else _padded_table(mdp, rewards)
    best = np.full(mdp.num_states, -np.inf)
    for seq in itertools.product(range(mdp.num_actions), repeat=mdp.H):
        cur = np.arange(mdp.num_states)
        tot = np.zeros(mdp.num_states)
        for h, a in enumerate(seq):
            tot += table[h, cur, a]
            if h < mdp.H - 1:
                cur = mdp.transition[h, cur, a]
        best = np.maximum(best, tot)
    return best
