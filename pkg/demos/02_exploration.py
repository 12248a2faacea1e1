"""
Exploration without rewards
===========================

Phase I builds, layer by layer, a subspace that holds the reachable features
(with policies witnessing each direction) and then a barycentric spanner of
policies whose mean features reconstruct every reachable mean feature.
"""

import numpy as np

from lbcrl.env import EnvSpec, make_env
from lbcrl.linalg import orthonormal_basis, subspace_contains
from lbcrl.pipeline import compute_spanner_fqi, schedule
from lbcrl.rollout import RngStream, exact_feature_expectation

mdp = make_env(EnvSpec("hidden_subspace", 32, 2, 4, 4, seed=2, reward_noise_scale=0.5, hidden_fraction=1.0))
eps, delta = 0.15, 0.1

# The theory-mode sample sizes are huge; practical mode scales them down.
theory = schedule(eps, delta, mdp.d, mdp.H)
sched = schedule(eps, delta, mdp.d, mdp.H, mode="practical", scale=0.02)
for key in ("n_test", "n_samp", "m_boost", "n_reject", "n_span", "n_cover"):
    print(f"{key:9s} theory {getattr(theory, key):>14,d}   practical {getattr(sched, key):>12,d}")

out = compute_spanner_fqi(mdp, eps, delta, sched, RngStream(2).generator())

###############################################################################
# The recovered subspaces match the planted ones
# ----------------------------------------------
for h in range(mdp.H):
    planted = orthonormal_basis(mdp.planted[h], d=mdp.d)
    inside = all(subspace_contains(out.subspaces[h], v, 1e-6) for v in planted.basis)
    print(f"layer {h}: dim {out.subspaces[h].dim} (planted {planted.dim}), contains planted: {inside}, "
          f"cover size {len(out.covers[h])}")

# Each accepted outlier direction grew the subspace by one; the last search found none.
log = out.diagnostics["outlier_log"][0]
for rec in log:
    if rec["accepted_direction"] is not None:
        print(f"  t={rec['t']} trial={rec['i']} outliers {rec['n_outlier_minus']:>9,d} -> {rec['n_outlier_plus']:>9,d}")
print(f"  final search: {sum(r['accepted_direction'] is None for r in log)} trials, no outlier direction")

###############################################################################
# Spanner reconstruction
# ----------------------
# Mean features of the spanner policies, computed exactly.
h = 1
W = np.array([exact_feature_expectation(mdp, h, pi) for pi in out.spanners[h]]).T
print("spanner size:", W.shape[1], " rank:", np.linalg.matrix_rank(W, tol=1e-8))
print("spanner iterations per layer:", out.diagnostics["spanner_iterations"])
