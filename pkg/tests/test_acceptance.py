"""Acceptance criteria, one test each.

Every test records a one-line verdict in ``RESULTS``; ``conftest.py`` prints
them at the end of the session. Run this file directly for the same lines
without pytest: ``python3 tests/test_acceptance.py``.
"""

import itertools
import time

import numpy as np
from scipy import stats

from lbcrl.cli import format_report
from lbcrl.env import (
    EnvSpec,
    LinearReward,
    TabularPolicy,
    dp_optimal,
    exact_policy_value,
    make_hidden_subspace,
    make_rotated_tabular,
    verify_lbc,
)
from lbcrl.fqi import fqi
from lbcrl.linalg import min_norm_lstsq, orthonormal_basis, subspace_contains
from lbcrl.ocp import ocp_run
from lbcrl.pipeline import Knobs, end_to_end_fqi, end_to_end_ocp, schedule, suboptimality
from lbcrl.policy_opt import ellipsoid_radius
from lbcrl.rollout import RngStream
from lbcrl.spanner import robust_spanner, spanner_iteration_bound
from lbcrl.subspace_cover import DiscreteDistribution, in_span, rejection_sampling, subspace_cover

RESULTS: dict[int, str] = {}


def record(k: int, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    in_time = elapsed <= budget
    verdict = "PASS" if ok and in_time else "FAIL"
    RESULTS[k] = f"criterion {k:2d}: {verdict}  {detail}  [{elapsed:.1f}s / {budget:.0f}s]"
    print(RESULTS[k])
    assert ok, RESULTS[k]
    assert in_time, RESULTS[k]


def hidden_env(seed, A):
    return make_hidden_subspace(EnvSpec("hidden_subspace", 32, 2, 4, A, seed, 0.5, 1.0))


E2E_EPS, E2E_DELTA = 0.15, 0.1
FQI_KNOBS = Knobs(scale=0.02, n_phase2=3000)
OCP_KNOBS = Knobs(scale=0.02, n_phase2=3000, T=50)


def e2e_report(kind, seed):
    if kind == "fqi":
        mdp, run, knobs = hidden_env(seed, 4), end_to_end_fqi, FQI_KNOBS
    else:
        mdp, run, knobs = hidden_env(seed, 2), end_to_end_ocp, OCP_KNOBS
    return run(mdp, E2E_EPS, E2E_DELTA, knobs, RngStream(seed).generator(), seed=seed)[1]


def constant_policy_gap(mdp):
    """Best gap among always-the-same-action policies, as a difficulty reference."""
    return min(suboptimality(mdp, TabularPolicy(np.full((mdp.H, mdp.num_states), a))) for a in range(mdp.num_actions))


# 1 -----------------------------------------------------------------------------------------


def test_criterion_01_lbc_certification():
    t0 = time.perf_counter()
    shapes = [(8, 4, 3), (4, 2, 2), (6, 3, 3), (8, 2, 3), (5, 4, 2), (3, 3, 3), (7, 2, 2), (8, 3, 1), (2, 4, 3), (4, 4, 3)]
    worst = 0.0
    for seed, (S, A, H) in enumerate(shapes):
        mdp = make_rotated_tabular(EnvSpec("rotated_tabular", S * A, H, S, A, seed, 0.5))
        worst = max(worst, verify_lbc(mdp, 20, 1e-9, RngStream(seed, 1).generator()))
    record(1, worst <= 1e-9, f"max LBC residual {worst:.2e} over 10 envs", time.perf_counter() - t0, 10)


# 2 -----------------------------------------------------------------------------------------


def open_loop_cover(mdp, layers):
    return [
        [TabularPolicy(np.repeat(np.array(s)[:, None], mdp.num_states, 1))
         for s in itertools.product(range(mdp.num_actions), repeat=l + 1)]
        for l in range(layers)
    ]


def test_criterion_02_deterministic_reward_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        mdp = make_rotated_tabular(EnvSpec("rotated_tabular", 8, 2, 4, 2, seed, 0.0))
        V, _ = dp_optimal(mdp)
        best = float(mdp.initial_dist @ V[0])
        rew = LinearReward(mdp.reward_params)
        pi_ocp = ocp_run(mdp, rew, 1.0, 300, RngStream(seed).generator())
        pi_fqi = fqi(mdp, mdp.H - 1, rew, open_loop_cover(mdp, mdp.H - 1), 200, RngStream(seed).generator())
        worst = max(worst, abs(best - exact_policy_value(mdp, pi_ocp)), abs(best - exact_policy_value(mdp, pi_fqi)))
    record(2, worst <= 1e-6, f"max |V* - V^pi| {worst:.2e} over 5 seeds (OCP and FQI)", time.perf_counter() - t0, 30)


# 3, 4 --------------------------------------------------------------------------------------


def end_to_end(k, kind, A):
    t0 = time.perf_counter()
    gaps, refs = [], []
    for seed in range(10):
        gaps.append(e2e_report(kind, seed)["suboptimality_exact"])
        refs.append(constant_policy_gap(hidden_env(seed, A)))
    good = sum(g <= 0.15 for g in gaps)
    detail = (f"{good}/10 seeds with gap <= 0.15; gaps mean {np.mean(gaps):.4f} max {np.max(gaps):.4f}; "
              f"best constant policy mean gap {np.mean(refs):.3f}")
    record(k, good >= 8, detail, time.perf_counter() - t0, 300)


def test_criterion_03_end_to_end_fqi():
    end_to_end(3, "fqi", 4)


def test_criterion_04_end_to_end_ocp():
    end_to_end(4, "ocp", 2)


# 5 -----------------------------------------------------------------------------------------


def test_criterion_05_spanner_quality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    d, C, eps = 3, 2.0, 0.02
    v = rng.normal(size=(50, d))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(size=(50, 1)) ** (1 / d)
    res = robust_spanner(lambda th: int(np.argmax(pts @ th)), lambda z: pts[z], C, eps, d=d)
    W = pts[res.policies].T
    worst_err, worst_beta = 0.0, 0.0
    for z in rng.integers(0, 50, size=200):
        beta, *_ = np.linalg.lstsq(W, pts[z], rcond=None)
        worst_err = max(worst_err, float(np.linalg.norm(W @ beta - pts[z])))
        worst_beta = max(worst_beta, float(np.max(np.abs(beta))))
    bound = spanner_iteration_bound(d, eps, C)
    ok = worst_err <= 3 * C * d * eps and worst_beta <= C + 0.01 and res.iterations_used <= bound
    detail = f"max error {worst_err:.2e} (<= 0.36), max |beta| {worst_beta:.3f}, iterations {res.iterations_used}/{bound}"
    record(5, ok, detail, time.perf_counter() - t0, 5)


# 6 -----------------------------------------------------------------------------------------


def adversarial_laws(d, n, rng):
    """Distributions that put fresh directions on low-probability atoms."""
    basis = np.eye(d)
    # d-1 rare directions at 1/(n+1) each maximise the chance of a late first sighting.
    rare = np.r_[np.full(d - 1, 1 / (n + 1)), 1 - (d - 1) / (n + 1)]
    yield DiscreteDistribution(basis, rare)
    yield DiscreteDistribution(basis, np.full(d, 1 / d))
    geo = 0.5 ** np.arange(d)
    yield DiscreteDistribution(basis, geo / geo.sum())
    mixed = np.vstack([basis, rng.normal(size=(3, d))])
    yield DiscreteDistribution(mixed, np.r_[np.full(d, 0.8 / d), np.full(3, 0.2 / 3)])


def test_criterion_06_span_probability_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    trials = 2000
    ok, worst = True, -np.inf
    for d, n in [(2, 4), (3, 6), (4, 12)]:
        bound = d / (n + 1)
        sigma = np.sqrt(bound * (1 - bound) / trials)
        for law in adversarial_laws(d, n, rng):
            misses = 0
            for _ in range(trials):
                draws = law.sample(rng, n + 1)
                misses += not in_span(draws[:n], draws[n])
            rate = misses / trials
            worst = max(worst, rate - bound)
            ok &= rate <= bound + 3 * sigma
    record(6, ok, f"worst exceedance minus d/(n+1): {worst:+.4f} over 12 cells", time.perf_counter() - t0, 10)


# 7 -----------------------------------------------------------------------------------------


def test_criterion_07_rejection_sampling():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    dist = DiscreteDistribution(np.array([[1.0, 0], [0, 1], [1, 1], [2, -1]]), np.array([0.1, 0.2, 0.3, 0.4]))
    accept = lambda v: v[0] > 0  # noqa: E731
    counts = np.zeros(3)
    atoms = dist.atoms[[0, 2, 3]]
    accepted = 0
    while accepted < 10**4:
        v = rejection_sampling(dist, accept, 40, rng)
        if v.any():
            counts[int(np.flatnonzero(np.all(atoms == v, axis=1))[0])] += 1
            accepted += 1
    p_chi = stats.chisquare(counts, np.array([0.1, 0.3, 0.4]) / 0.8 * accepted).pvalue

    bern = DiscreteDistribution(np.array([[1.0], [2.0]]), np.array([0.3, 0.7]))
    p, K, trials = 0.3, 40, 10**4
    zeros = sum(not rejection_sampling(bern, lambda v: v[0] == 1.0, K, rng).any() for _ in range(trials))
    q = (1 - p) ** K
    dev = abs(zeros / trials - q)
    sigma = np.sqrt(q * (1 - q) / trials)
    ok = p_chi > 0.01 and dev <= 3 * sigma
    detail = f"chi-square p={p_chi:.3f}; zero rate {zeros / trials:.2e} vs (1-p)^K={q:.2e} (3 sigma {3 * sigma:.1e})"
    record(7, ok, detail, time.perf_counter() - t0, 10)


# 8 -----------------------------------------------------------------------------------------


def test_criterion_08_ridge_ellipsoid_coverage():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    d, m, lam, reps = 4, 200, 1.0, 500
    lines, ok = [], True
    for failure in (0.1, 0.05):
        hits = 0
        for _ in range(reps):
            w_star = rng.normal(size=d)
            w_star /= np.linalg.norm(w_star)
            X = rng.normal(size=(m, d)) / np.sqrt(d)
            y = X @ w_star + rng.normal(size=m)
            V = lam * np.eye(d) + X.T @ X
            diff = np.linalg.solve(V, X.T @ y) - w_star
            hits += np.sqrt(diff @ V @ diff) <= ellipsoid_radius(1.0, V, lam, failure)
        cov = hits / reps
        floor = 1 - failure - 3 * np.sqrt(failure * (1 - failure) / reps)
        ok &= cov >= floor
        lines.append(f"coverage {cov:.3f} (floor {floor:.3f}) at {failure}")
    record(8, ok, "; ".join(lines), time.perf_counter() - t0, 30)


# 9 -----------------------------------------------------------------------------------------


def test_criterion_09_noiseless_regression_orthogonality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    worst_orth, worst_fit = 0.0, 0.0
    for _ in range(100):
        d = int(rng.integers(2, 9))
        r = int(rng.integers(1, d))
        m = int(rng.integers(r, 3 * d))
        X = rng.normal(size=(m, r)) @ rng.normal(size=(r, d))
        theta = rng.normal(size=d)
        y = X @ theta
        est = min_norm_lstsq(X, y)
        worst_orth = max(worst_orth, float(np.max(np.abs(X.T @ X @ (est - theta)))))
        worst_fit = max(worst_fit, float(np.max(np.abs(X @ est - y))))
    ok = worst_orth <= 1e-9 and worst_fit <= 1e-9
    record(9, ok, f"max |Sigma (theta_hat - theta*)| {worst_orth:.1e}; max residual {worst_fit:.1e}",
           time.perf_counter() - t0, 5)


# 10 ----------------------------------------------------------------------------------------


def test_criterion_10_subspace_recovery():
    t0 = time.perf_counter()
    ok, dims = True, []
    for seed in range(5):
        # With all initial mass on hidden states the planted span is the whole reachable span.
        mdp = make_hidden_subspace(EnvSpec("hidden_subspace", 32, 3, 4, 4, seed, 0.5, 1.0))
        sched = schedule(0.15, 0.1, mdp.d, mdp.H, mode="practical", scale=0.02)
        rng = RngStream(seed).generator()
        covers, got = [], []
        for h in range(mdp.H):
            res = subspace_cover(mdp, h, covers, 0.15, 0.1 / (4 * mdp.H), sched, rng)
            covers.append(res.policies)
            planted = orthonormal_basis(mdp.planted[h], d=mdp.d)
            ok &= res.subspace.dim == planted.dim
            ok &= all(subspace_contains(res.subspace, v, 1e-6) for v in planted.basis)
            got.append(f"{res.subspace.dim}/{planted.dim}")
        dims.append(",".join(got))
    record(10, ok, "recovered/planted dims per seed: " + " ".join(dims), time.perf_counter() - t0, 120)


# 11 ----------------------------------------------------------------------------------------


def test_criterion_11_reproducibility():
    t0 = time.perf_counter()
    same = []
    for kind in ("fqi", "ocp"):
        for seed in (0, 7):
            a = format_report(e2e_report(kind, seed)).encode()
            b = format_report(e2e_report(kind, seed)).encode()
            same.append(a == b)
    record(11, all(same), f"{sum(same)}/{len(same)} report pairs byte-identical", time.perf_counter() - t0, 300)


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
