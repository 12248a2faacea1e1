"""Planning with estimated rewards: ridge estimates, proxy rewards, statistical bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import DeterministicMdp, LinearReward
from .fqi import LinearGreedyPolicy, fqi
from .ocp import OptimisticPolicy, ocp_run
from .rollout import rollout_batch


@dataclass(frozen=True)
class RewardEstimate:
    w_hat: np.ndarray
    grams: np.ndarray
    lam: float
    n_per_policy: int

    def proxy(self, bound: float | None = None) -> LinearReward:
        return LinearReward(self.w_hat, bound)


@dataclass(frozen=True)
class BoundReport:
    zeta: float
    big_C: float
    eps_stat: float

    def to_dict(self) -> dict:
        return {"zeta": self.zeta, "big_C": self.big_C, "eps_stat": self.eps_stat}


def estimate_rewards(mdp: DeterministicMdp, gamma, n: int, lam: float, rng: np.random.Generator) -> RewardEstimate:
    """Ridge-regress realised rewards on features, layer by layer.

    ``gamma[l]`` lists the policies rolled out ``n`` times each through layer ``l``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    d, H = mdp.d, mdp.H
    w_hat = np.zeros((H, d))
    grams = np.empty((H, d, d))
    for layer in range(H):
        gram = lam * np.eye(d)
        rhs = np.zeros(d)
        for pi in (gamma[layer] if layer < len(gamma) else []):
            batch = rollout_batch(mdp, pi, layer, n, rng)
            phi = batch.features(mdp, layer)
            gram += (phi * batch.counts[:, None]).T @ phi
            rhs += phi.T @ batch.reward_sums[:, layer]
        grams[layer] = gram
        w_hat[layer] = np.linalg.solve(gram, rhs)
    return RewardEstimate(w_hat, grams, lam, int(n))


def policy_opt_ocp(mdp, gamma, n: int, lam: float, T: int, rng, detailed: bool = False):
    """Estimate rewards from ``gamma`` then plan on the proxy rewards with OCP."""
    est = estimate_rewards(mdp, gamma, n, lam, rng)
    c_hat = float(np.max(np.linalg.norm(est.w_hat, axis=1)))
    bound = c_hat if c_hat > 0 else 1.0
    pi: OptimisticPolicy = ocp_run(mdp, est.proxy(bound), bound, T, rng)
    return (pi, est) if detailed else pi


def policy_opt_fqi(mdp, psi, gamma, n: int, lam: float, rng, detailed: bool = False):
    """Estimate rewards from ``gamma`` then plan on the proxy rewards with FQI over ``psi``."""
    est = estimate_rewards(mdp, gamma, n, lam, rng)
    pi: LinearGreedyPolicy = fqi(mdp, mdp.H - 1, est.proxy(), psi, n, rng)
    return (pi, est) if detailed else pi


def zeta(d: int, H: int, n: float, lam: float, delta: float) -> float:
    return math.sqrt(lam * d) + math.sqrt(2 * math.log(H / delta) + d * math.log(1 + n / lam))


def bound_report(d: int, H: int, n: float, lam: float, delta: float, big_C_override: float | None = None) -> BoundReport:
    """Confidence radius, estimator-norm bound and uniform-convergence error."""
    if min(d, H, n, lam) <= 0:
        raise ValueError("d, H, n and lambda must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    z = zeta(d, H, n, lam, delta)
    C = math.sqrt(d) + z / math.sqrt(lam)
    C_used = C if big_C_override is None else big_C_override
    eps = C_used * math.sqrt(8 * (d * math.log(1 + 2 * n * C_used) + math.log(2 * H * d / delta)) / n) + 2 / n
    return BoundReport(z, C, eps)


def proxy_value_gap_bound(d: int, H: int, n: float, lam: float, delta: float, eps_span: float) -> float:
    """Sum over layers of ``2 sqrt(d/n) zeta + 2 d eps_stat + (sqrt(d) + C) eps_span``."""
    rep = bound_report(d, H, n, lam, delta)
    per_layer = 2 * math.sqrt(d / n) * rep.zeta + 2 * d * rep.eps_stat + (math.sqrt(d) + rep.big_C) * eps_span
    return H * per_layer


def ellipsoid_radius(w_star_norm: float, gram: np.ndarray, lam: float, failure: float) -> float:
    """``sqrt(lam) |w*| + sqrt(2 log(1/failure) + log(det V / lam^d))``."""
    d = gram.shape[0]
    logdet = np.linalg.slogdet(gram)[1] - d * math.log(lam)
    return math.sqrt(lam) * w_star_norm + math.sqrt(2 * math.log(1 / failure) + logdet)
