"""
Synthetic environments and their exact solutions
================================================

Both environment families are tabular MDPs in disguise: each (state, action)
pair gets an orthonormal feature vector, so any Bellman backup of a linear
value function is again linear. That property is checked numerically below,
alongside the exact optimum from backward induction.
"""

import numpy as np

from lbcrl.env import EnvSpec, dp_optimal, exact_policy_value, make_env, truncate_features, verify_lbc
from lbcrl.fqi import LinearGreedyPolicy
from lbcrl.rollout import RngStream, mc_policy_value

# A rotated tabular env: d = S * A, features are a random rotation of one-hot codes.
spec = EnvSpec("rotated_tabular", d=8, H=3, num_states=4, num_actions=2, seed=1, reward_noise_scale=0.5)
mdp = make_env(spec)
print(spec.to_text())
print("feature tensor shape (H, S, A, d):", mdp.features.shape)

# Completeness residual over random linear value functions; ~1e-15 here.
print("LBC residual:", verify_lbc(mdp, 20, 1e-9, RngStream(0).generator()))

# Dropping a single coordinate breaks it.
print("LBC residual, 7 of 8 coordinates kept:", verify_lbc(truncate_features(mdp, 7), 20, 1e-9, RngStream(0).generator()))

###############################################################################
# Exact optimum versus Monte Carlo
# --------------------------------
V, greedy = dp_optimal(mdp)
print("V*_0 per start state:", np.round(V[0], 4))
print("expected optimum:", float(mdp.initial_dist @ V[0]))

# A random linear greedy policy, scored exactly and by rollouts.
pi = LinearGreedyPolicy(np.random.default_rng(3).normal(size=(mdp.H, mdp.d)))
print("random policy, exact value:", exact_policy_value(mdp, pi))
print("random policy, 20000 rollouts:", mc_policy_value(mdp, pi, 20000, RngStream(4).generator()))

###############################################################################
# Hidden subspace
# ---------------
# Half the states form a closed block. With all initial mass there, reachable
# features stay in a planted subspace of half the ambient dimension.
hidden = make_env(EnvSpec("hidden_subspace", 32, 2, 4, 4, seed=0, reward_noise_scale=0.5, hidden_fraction=1.0))
print("planted dims per layer:", [len(b) for b in hidden.planted], "of d =", hidden.d)
