"""Group-relative policy optimization with rule-based rewards for multiple-choice VQA."""
from .dataset import (
    VqaRecord,
    bandit_records,
    default_family,
    generate_synthetic_family,
    load_records,
    render_prompt,
)
from .evaluation import EvalReport, evaluate, score_strict
from .grpo_core import (
    GrpoConfig,
    RolloutGroup,
    clipped_surrogate,
    group_advantages,
    grpo_gradient,
    grpo_objective,
    kl_penalty,
    prob_ratio,
)
from .policy import ToyTemplatePolicy, load_policy, save_policy
from .reward import ChoiceSet, parse_tagged_response, total_reward
from .trainer import generalization_experiment, train_grpo, train_sft

__version__ = "0.1.0"
