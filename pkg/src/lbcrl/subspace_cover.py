"""Greedy discovery of the reachable feature subspace at one layer.

Also provides the two sampling subroutines it relies on: budgeted rejection
sampling and the outlier-direction search that picks a sample likely to lie
in the span of a fresh batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env import DeterministicMdp, LinearReward
from .fqi import LinearGreedyPolicy, fqi
from .linalg import (
    MEMBERSHIP_TOL,
    Subspace,
    orthogonal_complement_basis,
    orthonormal_basis,
    project_complement,
    span_extend,
    subspace_contains,
)
from .rollout import rollout_batch

_MAX_ATOMS = 14


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution over R^d (atoms are rows)."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float)
        p = np.array(self.probs, dtype=float)
        if a.ndim != 2 or p.shape != (a.shape[0],):
            raise ValueError("atoms must be (k, d) with one probability per atom")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p / p.sum())

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=size, p=self.probs)
        return self.atoms[idx]

    def merged(self) -> "DiscreteDistribution":
        """Same law with duplicate atoms combined (exact equality)."""
        uniq, inv = np.unique(self.atoms, axis=0, return_inverse=True)
        probs = np.zeros(len(uniq))
        np.add.at(probs, inv.reshape(-1), self.probs)
        keep = probs > 0
        return DiscreteDistribution(uniq[keep], probs[keep])


Sampler = Callable[[np.random.Generator], np.ndarray]


def _draw(sampler, rng):
    if isinstance(sampler, DiscreteDistribution):
        return sampler.sample(rng)
    return np.asarray(sampler(rng), dtype=float)


# ---------------------------------------------------------------------------
# Rejection sampling
# ---------------------------------------------------------------------------


def rejection_sampling(base_sampler, accept: Callable[[np.ndarray], bool], K: int, rng: np.random.Generator,
                       d: int | None = None) -> np.ndarray:
    """First accepted draw among at most ``K`` attempts, else the zero vector."""
    if K < 1:
        raise ValueError("budget K must be at least 1")
    x = None
    for _ in range(int(K)):
        x = _draw(base_sampler, rng)
        if accept(x):
            return x
    return np.zeros_like(x) if x is not None else np.zeros(d or 0)


def rejection_law(base: DiscreteDistribution, accept: Callable[[np.ndarray], bool], K: int) -> DiscreteDistribution:
    """Exact output law of :func:`rejection_sampling` on a discrete base."""
    if K < 1:
        raise ValueError("budget K must be at least 1")
    mask = np.array([bool(accept(a)) for a in base.atoms])
    p_acc = float(base.probs[mask].sum())
    # Probability that all K draws are rejected, computed in log space.
    fail = 1.0 if p_acc == 0.0 else (0.0 if p_acc >= 1.0 else float(np.exp(K * np.log1p(-p_acc))))
    atoms = [np.zeros(base.dim)]
    probs = [fail]
    if p_acc > 0:
        atoms.extend(base.atoms[mask])
        probs.extend((1.0 - fail) * base.probs[mask] / p_acc)
    return DiscreteDistribution(np.array(atoms), np.array(probs)).merged()


# ---------------------------------------------------------------------------
# Outlier direction
# ---------------------------------------------------------------------------


def in_span(vectors, v, tol: float = MEMBERSHIP_TOL) -> bool:
    """Whether ``v`` lies in the span of the rows of ``vectors``."""
    vectors = np.asarray(vectors, dtype=float)
    basis = orthonormal_basis(list(vectors), tol=tol, d=len(v))
    return subspace_contains(basis, v, tol)


def span_inclusion_probabilities(dist: DiscreteDistribution, n: int, tol: float = MEMBERSHIP_TOL):
    """``P[atom_i in span(W)]`` for ``W`` an i.i.d. batch of ``n`` draws.

    Returns the probabilities together with the merged distribution whose
    atoms they refer to.

    Enumerates the set of distinct atoms that can appear in a batch; the
    probability that exactly the atoms in ``T`` appear follows from
    inclusion-exclusion over ``P[batch inside T] = p(T)^n``.
    """
    dist = dist.merged()
    k = len(dist.probs)
    if k > _MAX_ATOMS:
        raise ValueError(f"exact span probabilities support at most {_MAX_ATOMS} atoms, got {k}")
    subsets = list(range(1 << k))
    mass = np.array([dist.probs[[j for j in range(k) if s >> j & 1]].sum() for s in subsets])
    with np.errstate(divide="ignore"):
        inside = np.where(mass > 0, np.exp(n * np.log(np.clip(mass, 1e-300, None))), 0.0)
    inside[0] = 0.0
    exact = inside.copy()
    # Moebius inversion over the subset lattice: exact[T] = P[appearing set == T].
    for j in range(k):
        bit = 1 << j
        for s in subsets:
            if s & bit:
                exact[s] -= exact[s ^ bit]
    exact = np.clip(exact, 0.0, 1.0)
    out = np.zeros(k)
    for s in subsets[1:]:
        if exact[s] == 0.0:
            continue
        members = dist.atoms[[j for j in range(k) if s >> j & 1]]
        basis = orthonormal_basis(list(members), tol=tol, d=dist.dim)
        for i in range(k):
            if subspace_contains(basis, dist.atoms[i], tol):
                out[i] += exact[s]
    return np.clip(out, 0.0, 1.0), dist


@dataclass
class OutlierDirectionResult:
    direction: np.ndarray
    p_hat: float
    draws: int


def compute_outlier_direction(sampler, n: int, m: int, rng: np.random.Generator,
                              method: str = "auto", tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    """Return the anchor sample most often inside the span of a fresh batch.

    Draws ``n`` anchors; for each, counts over ``m`` fresh batches of ``n``
    samples how often the anchor lies in the batch span; returns the anchor
    with the largest count (lowest index on ties). For a
    :class:`DiscreteDistribution` the default ``method="auto"`` draws the
    counts from their exact binomial law instead of materialising the
    ``n + m n^2`` samples.
    """
    return compute_outlier_direction_detailed(sampler, n, m, rng, method, tol).direction


def compute_outlier_direction_detailed(sampler, n, m, rng, method="auto", tol=MEMBERSHIP_TOL):
    if n < 1 or m < 1:
        raise ValueError("n and m must be at least 1")
    n, m = int(n), int(m)
    if method not in ("auto", "literal"):
        raise ValueError("method must be 'auto' or 'literal'")
    if method == "auto" and isinstance(sampler, DiscreteDistribution):
        return _outlier_direction_exact(sampler, n, m, rng, tol)
    anchors = [_draw(sampler, rng) for _ in range(n)]
    scores = np.zeros(n, dtype=np.int64)
    for i, u in enumerate(anchors):
        for _ in range(m):
            batch = [_draw(sampler, rng) for _ in range(n)]
            scores[i] += in_span(batch, u, tol)
    best = int(np.argmax(scores))
    return OutlierDirectionResult(anchors[best], scores[best] / m, n + m * n * n)


def _outlier_direction_exact(dist: DiscreteDistribution, n: int, m: int, rng, tol):
    p_in, merged = span_inclusion_probabilities(dist, n, tol)
    anchor_counts = rng.multinomial(n, merged.probs)
    best_score = -1
    tied = np.zeros(len(merged.probs), dtype=np.int64)
    for j, c in enumerate(anchor_counts):
        if c == 0:
            continue
        scores = rng.binomial(m, p_in[j], size=int(c))
        top = int(scores.max())
        n_top = int(np.count_nonzero(scores == top))
        if top > best_score:
            best_score = top
            tied[:] = 0
        if top == best_score:
            tied[j] = n_top
    # Anchors arrive in i.i.d. order, so the lowest-index winner is a uniform pick among tied anchors.
    j = int(rng.choice(len(tied), p=tied / tied.sum()))
    return OutlierDirectionResult(merged.atoms[j].copy(), best_score / m, n + m * n * n)


# ---------------------------------------------------------------------------
# SubspaceCover
# ---------------------------------------------------------------------------


@dataclass
class OutlierRecord:
    t: int
    i: int
    n_minus: int
    n_plus: int
    accepted: list | None

    def to_dict(self) -> dict:
        return {"t": self.t, "i": self.i, "n_outlier_minus": self.n_minus, "n_outlier_plus": self.n_plus,
                "accepted_direction": self.accepted}


@dataclass
class CoverResult:
    subspace: Subspace
    policies: list
    outlier_log: list = field(default_factory=list)
    fqi_calls: int = 0


def projected_feature_law(mdp: DeterministicMdp, h: int, policy, s: Subspace) -> DiscreteDistribution:
    """Law of ``proj_{S^perp} phi_h(x_h, a_h)`` under ``policy``."""
    from .env import policy_paths

    starts = mdp.start_support()
    states, acts = policy_paths(mdp, policy, starts, h)
    feats = mdp.features[h, states[:, h], acts[:, h]]
    proj = np.array([project_complement(s, f) for f in feats])
    return DiscreteDistribution(proj, mdp.initial_dist[starts])


def count_outliers(mdp, h, policy, s: Subspace, n: int, rng, tol=MEMBERSHIP_TOL) -> int:
    batch = rollout_batch(mdp, policy, h, n, rng, sample_rewards=False)
    feats = batch.features(mdp, h)
    outside = np.array([not subspace_contains(s, f, tol) for f in feats])
    return int(batch.counts[outside].sum())


def subspace_cover(
    mdp: DeterministicMdp,
    h: int,
    prior_covers: Sequence[Sequence[LinearGreedyPolicy]],
    eps: float,
    delta: float,
    schedule,
    rng: np.random.Generator,
    tol: float = MEMBERSHIP_TOL,
) -> CoverResult:
    """Grow a subspace ``S`` and witness policies until no outlier direction is found.

    ``schedule`` supplies ``n_fqi``, ``n_test``, ``n_reject``, ``n_samp`` and
    ``m_boost``. ``delta`` is accepted for interface symmetry; the sample
    sizes in ``schedule`` already encode the confidence level.
    """
    d, H = mdp.d, mdp.H
    S = Subspace.zero(d)
    psi: list[LinearGreedyPolicy] = []
    log: list[OutlierRecord] = []
    calls = 0
    threshold = schedule.n_test * eps / (4 * H * d)
    for t in range(d + 1):
        K = d - S.dim
        if K == 0:
            break
        comp = orthogonal_complement_basis(S)
        found = False
        for i in range(K):
            theta = comp.basis[i]
            pols = {}
            for sign in (-1.0, 1.0):
                reward = LinearReward.single_layer(d, h, sign * theta)
                pols[sign] = fqi(mdp, h, reward, prior_covers, schedule.n_fqi, rng)
                calls += 1
            n_minus = count_outliers(mdp, h, pols[-1.0], S, schedule.n_test, rng, tol)
            n_plus = count_outliers(mdp, h, pols[1.0], S, schedule.n_test, rng, tol)
            pi, n_out = (pols[1.0], n_plus) if n_plus >= n_minus else (pols[-1.0], n_minus)
            if n_out > threshold:
                psi.append(pi)
                base = projected_feature_law(mdp, h, pi, S)
                law = rejection_law(base, lambda v: np.linalg.norm(v) > tol, schedule.n_reject)
                v = compute_outlier_direction(law, schedule.n_samp, schedule.m_boost, rng, tol=tol)
                S = span_extend(S, v, tol)
                log.append(OutlierRecord(t, i, n_minus, n_plus, [float(x) for x in v]))
                found = True
                break
            log.append(OutlierRecord(t, i, n_minus, n_plus, None))
        if not found:
            break
    return CoverResult(S, psi, log, calls)
