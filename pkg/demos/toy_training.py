"""
Format emergence on a one-question bandit
=========================================

The toy policy picks a response template, a letter and an answer style.
Untrained, three of its four templates break the required layout. GRPO
with the rule-based reward should discover the tidy letter-only answer.
"""

import numpy as np

from grpolab import GrpoConfig, ToyTemplatePolicy, bandit_records, evaluate, train_grpo

records = bandit_records()
policy = ToyTemplatePolicy()
print("expected reward before training:", round(policy.expected_reward(records[0]), 3))

# %%
# Plain SGD, six samples per question, lr 0.1.

state = train_grpo(records, policy, GrpoConfig(seed=7))
for row in state.history[::50] + state.history[-1:]:
    print(f"step {row['step']:3d}  sampled reward {row['mean_reward']:.2f}  "
          f"expected {row['expected_reward']:.3f}  format {row['format_rate']:.2f}  kl {row['mean_kl']:.3f}")

# %%
# The trained heads put nearly all mass on the well-formed template, the
# right letter and the letter-only style.

for name, lp in zip(("template", "letter", "style"), policy.head_logprobs(records[0])):
    print(name, np.round(np.exp(lp), 3))
print("strict accuracy:", evaluate(policy, records).accuracy("MRI"))

# %%
# The sampled KL estimator gives a rare sample a large weight. An
# occasional update is therefore huge and can throw the policy onto a
# malformed template, where every reward is zero and learning stalls.
# Capping the update norm avoids that.

for cap in (None, 1.0):
    pol = ToyTemplatePolicy()
    hist = train_grpo(records, pol, GrpoConfig(seed=8, max_grad_norm=cap)).history
    print(f"seed 8, max_grad_norm={cap}: final expected reward {hist[-1]['expected_reward']:.3f}")
