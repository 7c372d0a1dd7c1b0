"""
The pieces of the GRPO objective
================================

Group-normalized advantages, the clipped probability ratio and the KL
estimator, evaluated on one hand-built group.
"""

import numpy as np

from grpolab.grpo_core import (
    GrpoConfig,
    RolloutGroup,
    clipped_surrogate,
    group_advantages,
    grpo_objective,
    kl_penalty,
)

# %%
# Six sampled answers to one question. Advantages are z-scores within the
# group, so only relative quality matters.

rewards = np.array([2.0, 1.5, 0.0, 1.0, 2.0, 0.0])
adv = group_advantages(rewards)
print("advantages", np.round(adv, 3))
print("identical rewards give", group_advantages([1.0] * 4))

# %%
# The surrogate stops rewarding a sample once its ratio leaves
# [1 - eps, 1 + eps] in the favourable direction.

for ratio in (0.7, 1.0, 1.1, 1.5):
    print(f"ratio {ratio:.1f}: A=+1 -> {clipped_surrogate(ratio, 1.0, 0.2):+.2f}, "
          f"A=-1 -> {clipped_surrogate(ratio, -1.0, 0.2):+.2f}")

# %%
# The per-sample KL estimate is never negative and is zero when the live
# and reference log-probabilities agree.

print("kl(-2, -2) =", kl_penalty(-2.0, -2.0))
print("kl(-2, -1) =", round(kl_penalty(-2.0, -1.0), 4))
print("kl(-1, -2) =", round(kl_penalty(-1.0, -2.0), 4))

# %%
# Putting it together: the live policy has drifted slightly from the
# sampling snapshot and from the reference.

rng = np.random.default_rng(0)
logp_old = rng.uniform(-4, -1, 6)
logp_new = logp_old + rng.normal(0, 0.3, 6)
logp_ref = logp_old + rng.normal(0, 0.3, 6)
group = RolloutGroup("demo", [f"r{i}" for i in range(6)], logp_new, logp_old, logp_ref, rewards, adv)
for beta in (0.0, 0.04, 0.1):
    print(f"beta={beta}: objective {grpo_objective(group, GrpoConfig(kl_beta=beta)):+.4f}")
