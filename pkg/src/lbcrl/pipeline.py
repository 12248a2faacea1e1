"""Exploration drivers, end-to-end procedures and the sample-size schedule."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .env import DeterministicMdp, LinearReward, dp_optimal, exact_policy_value
from .fqi import fqi
from .linalg import Subspace
from .ocp import ocp_run
from .policy_opt import bound_report, policy_opt_fqi, policy_opt_ocp
from .rollout import vec_eval
from .spanner import robust_spanner
from .subspace_cover import subspace_cover

MODES = ("theory", "practical")
MAX_COUNT = 2**62
# Phase I tolerances above this are clamped so that tiny constants still run.
MAX_PHASE1_EPS = 0.99


def _count(x: float, mode: str, scale: float) -> int:
    v = x * scale if mode == "practical" else x
    return int(min(max(1, math.ceil(v)), MAX_COUNT))


@dataclass(frozen=True)
class ParameterSchedule:
    """Sample sizes and tolerances for the FQI-based exploration phase.

    The ``*_raw`` values are the closed forms; the integer fields are what
    the algorithms use (rounded up, scaled in practical mode, at least 1).
    """

    eps: float
    delta: float
    d: int
    H: int
    mode: str
    scale: float
    c1: float
    eps_rob: float
    N_iter: int
    delta_prime: float
    n_veceval_raw: float
    n_test_raw: float
    n_samp_raw: float
    m_boost_raw: float
    n_reject_raw: float
    n_span_raw: float
    n_cover_raw: float
    n_veceval: int
    n_test: int
    n_samp: int
    m_boost: int
    n_reject: int
    n_span: int
    n_cover: int

    @property
    def n_fqi(self) -> int:
        return self.n_cover

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_ranges(eps, delta, scale, mode):
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")


def schedule(eps: float, delta: float, d: int, H: int, mode: str = "theory", scale: float = 1.0,
             c1: float = 1.0) -> ParameterSchedule:
    _check_ranges(eps, delta, scale, mode)
    eps_rob = eps / (192 * d * H**2)
    N_iter = d + math.ceil(d / 2 * math.log2(100 * d / eps_rob**2))
    dp = delta / (8 * H * d**2 * N_iter)
    n_veceval = c1 * H**4 * d**2 * eps**-2 * math.log(1 / dp)
    n_test = 128 * H**2 * d**2 * math.log(4 / dp) / eps**2
    n_samp = 512 * d**2 * math.log(256 * d / dp)
    m_boost = 2048 * d**2 * math.log(4 / dp)
    # Use the rounded counts inside later formulas: these are the sizes actually drawn.
    ns, mb = math.ceil(n_samp), math.ceil(m_boost)
    n_reject = 8 * H * d * math.log((ns + ns**2 * mb) / dp) / eps
    n_span = math.ceil(
        16 * H * d * math.sqrt(math.log(4 * d) * ns) / eps + 32 * H * d * math.log(4 * d) / eps + 8 * H * d * ns / eps
    )
    n_cover = math.ceil(math.log2(H**2 * d / dp)) * n_span
    c = lambda x: _count(x, mode, scale)  # noqa: E731
    return ParameterSchedule(
        eps, delta, d, H, mode, scale, c1, eps_rob, N_iter, dp,
        n_veceval, n_test, n_samp, m_boost, n_reject, float(n_span), float(n_cover),
        c(n_veceval), c(n_test), c(n_samp), c(m_boost), c(n_reject), c(n_span), c(n_cover),
    )


@dataclass(frozen=True)
class OcpSchedule:
    eps: float
    delta: float
    N_iter: int
    delta_prime: float
    n_veceval_raw: float
    n_veceval: int
    mode: str
    scale: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def ocp_schedule(eps, delta, d, H, mode="theory", scale=1.0, c1=1.0) -> OcpSchedule:
    _check_ranges(eps, delta, scale, mode)
    N_iter = d + math.ceil(d / 2 * math.log2(400 * d / eps**2))
    dp = delta / (16 * H * N_iter)
    raw = c1 * d**2 * eps**-2 * math.log(1 / dp)
    return OcpSchedule(eps, delta, N_iter, dp, raw, _count(raw, mode, scale), mode, scale)


# ---------------------------------------------------------------------------
# Phase I
# ---------------------------------------------------------------------------


@dataclass
class PhaseOneOutput:
    subspaces: list
    covers: list
    spanners: list
    diagnostics: dict = field(default_factory=dict)


def compute_spanner_ocp(mdp: DeterministicMdp, eps: float, delta: float, T: int, sched: OcpSchedule,
                        rng: np.random.Generator) -> PhaseOneOutput:
    """Per layer, a spanner over policies found by OCP on normalised directional rewards."""
    d = mdp.d
    spanners, iters, calls = [], [], []
    for h in range(mdp.H):
        def lin_opt(theta, h=h):
            w = np.asarray(theta) / np.linalg.norm(theta)
            return ocp_run(mdp, LinearReward.single_layer(d, h, w, 1.0), 1.0, T, rng, horizon=h + 1)

        def vec(pi, h=h):
            return vec_eval(mdp, h, pi, sched.n_veceval, rng)

        res = robust_spanner(lin_opt, vec, 2.0, eps / 2, d=d)
        spanners.append(res.policies)
        iters.append(res.iterations_used)
        calls.append(res.oracle_calls)
    return PhaseOneOutput([], [], spanners, {"spanner_iterations": iters, "oracle_calls": calls})


def compute_spanner_fqi(mdp: DeterministicMdp, eps: float, delta: float, sched: ParameterSchedule,
                        rng: np.random.Generator) -> PhaseOneOutput:
    """Per layer, a subspace cover followed by a spanner over FQI policies."""
    d, H = mdp.d, mdp.H
    subspaces: list[Subspace] = []
    covers: list[list] = []
    spanners, iters, calls, fqi_calls, logs = [], [], [], [], []
    for h in range(H):
        cover = subspace_cover(mdp, h, covers, eps, delta / (4 * H), sched, rng)
        subspaces.append(cover.subspace)
        covers.append(cover.policies)
        fqi_calls.append(cover.fqi_calls)
        logs.append([r.to_dict() for r in cover.outlier_log])
        prior = covers[:h]

        def lin_opt(theta, h=h, prior=prior):
            return fqi(mdp, h, LinearReward.single_layer(d, h, theta), prior, sched.n_fqi, rng)

        def vec(pi, h=h):
            return vec_eval(mdp, h, pi, sched.n_veceval, rng)

        res = robust_spanner(lin_opt, vec, 2.0, sched.eps_rob, d=d)
        spanners.append(res.policies)
        iters.append(res.iterations_used)
        calls.append(res.oracle_calls)
    diag = {"spanner_iterations": iters, "oracle_calls": calls, "cover_fqi_calls": fqi_calls, "outlier_log": logs}
    return PhaseOneOutput(subspaces, covers, spanners, diag)


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Knobs:
    """Free constants of the end-to-end procedures.

    ``c0``, ``c1``, ``c2`` are the unspecified universal constants; ``T`` is
    the OCP episode count; ``n_phase2`` overrides the planning sample size.
    """

    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    T: int = 100
    lam: float = 1.0
    mode: str = "practical"
    scale: float = 1.0
    n_phase2: int | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def suboptimality(mdp: DeterministicMdp, policy) -> float:
    V, _ = dp_optimal(mdp)
    return float(mdp.initial_dist @ V[0] - exact_policy_value(mdp, policy))


def _phase2_n(raw: float, knobs: Knobs) -> int:
    if knobs.n_phase2 is not None:
        return int(knobs.n_phase2)
    return _count(raw, knobs.mode, knobs.scale)


def _report(mdp, sched, knobs, phase1, est, n, delta, policy, seed, elapsed_ms, record_time):
    w_norms = [float(np.linalg.norm(w)) for w in est.w_hat]
    return {
        "env_spec": dataclasses.asdict(mdp.spec) if mdp.spec is not None else None,
        "schedule": sched.to_dict(),
        "knobs": knobs.to_dict(),
        "phase1": {
            "dims": [s.dim for s in phase1.subspaces] if phase1.subspaces else None,
            "psi_sizes": [len(c) for c in phase1.covers] if phase1.covers else None,
            "spanner_iterations": phase1.diagnostics.get("spanner_iterations"),
            "oracle_calls": phase1.diagnostics.get("oracle_calls"),
        },
        "phase2": {
            "n": n,
            "w_hat_norms": w_norms,
            "bound_report": bound_report(mdp.d, mdp.H, n, knobs.lam, delta).to_dict(),
        },
        "suboptimality_exact": suboptimality(mdp, policy),
        "wall_time_ms": elapsed_ms if record_time else None,
        "seed": seed,
    }


def end_to_end_fqi(mdp: DeterministicMdp, eps: float, delta: float, knobs: Knobs, rng: np.random.Generator,
                   seed: int | None = None, record_time: bool = False):
    """Exploration with subspace covers and spanners, then FQI on estimated rewards."""
    start = time.perf_counter()
    d, H = mdp.d, mdp.H
    L = max(1.0, math.log(d * H / (delta * eps)))
    eps1 = min(eps / (knobs.c0 * d**2 * H**2 * L), MAX_PHASE1_EPS)
    sched = schedule(eps1, delta / 4, d, H, knobs.mode, knobs.scale, knobs.c1)
    phase1 = compute_spanner_fqi(mdp, eps1, delta / 4, sched, rng)
    n = _phase2_n(max(sched.n_cover_raw, knobs.c2 * d**4 * H**2 * L**2 / eps**2), knobs)
    policy, est = policy_opt_fqi(mdp, phase1.covers, phase1.spanners, n, knobs.lam, rng, detailed=True)
    elapsed = (time.perf_counter() - start) * 1e3
    return policy, _report(mdp, sched, knobs, phase1, est, n, delta, policy, seed, elapsed, record_time)


def end_to_end_ocp(mdp: DeterministicMdp, eps: float, delta: float, knobs: Knobs, rng: np.random.Generator,
                   seed: int | None = None, record_time: bool = False):
    """Exploration with OCP-driven spanners, then OCP on estimated rewards."""
    start = time.perf_counter()
    d, H = mdp.d, mdp.H
    L = d + math.log(d * H / (delta * eps))
    eps1 = min(eps / (knobs.c0 * d * H * L), MAX_PHASE1_EPS)
    sched = ocp_schedule(eps1, delta / 2, d, H, knobs.mode, knobs.scale, knobs.c1)
    phase1 = compute_spanner_ocp(mdp, eps1, delta / 2, knobs.T, sched, rng)
    n = _phase2_n(knobs.c1 * d**2 * H**2 * L**2 / eps**2, knobs)
    policy, est = policy_opt_ocp(mdp, phase1.spanners, n, knobs.lam, knobs.T, rng, detailed=True)
    elapsed = (time.perf_counter() - start) * 1e3
    return policy, _report(mdp, sched, knobs, phase1, est, n, delta, policy, seed, elapsed, record_time)
