"""Finite-difference checks for the policy score function and the GRPO gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grpo_core
from .dataset import VqaRecord
from .grpo_core import GrpoConfig, RolloutGroup
from .policy import ToyTemplatePolicy

EPS_CHOICES = (0.0, 0.1, 0.2)
BETA_CHOICES = (0.0, 0.04, 0.1)


def central_difference(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def relative_error(analytic, numeric) -> tuple[float, int]:
    """max|a - n| / max(max|a|, max|n|), and the worst index.

    Two all-zero vectors have error 0.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    diff = np.abs(a - n)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    worst = int(np.argmax(diff)) if diff.size else -1
    if scale == 0.0:
        return (0.0 if diff.size == 0 or diff.max() == 0.0 else np.inf), worst
    return float(diff.max() / scale), worst


def objective_at(theta, policy: ToyTemplatePolicy, group: RolloutGroup, config: GrpoConfig) -> float:
    """GRPO objective with the live parameters replaced by ``theta``."""
    live = policy.with_params(theta)
    g = RolloutGroup(
        record_id=group.record_id,
        responses=group.responses,
        logp_new=[live.logprob(group.context, r) for r in group.responses],
        logp_old=group.logp_old,
        logp_ref=group.logp_ref,
        rewards=group.rewards,
        advantages=group.advantages,
        context=group.context,
    )
    return grpo_core.grpo_objective(g, config)


@dataclass
class TrialResult:
    trial: int
    grpo_error: float
    grpo_index: int
    score_error: float
    score_index: int
    clip_eps: float
    kl_beta: float

    @property
    def error(self) -> float:
        return max(self.grpo_error, self.score_error)


def random_instance(rng: np.random.Generator):
    """Random policy, snapshots, record and rollout group for one trial."""
    n_cats = int(rng.integers(0, 4))
    cats = [f"c{i}" for i in range(n_cats)]
    n_options = int(rng.integers(2, 7))
    record = VqaRecord(
        id="trial",
        question="q",
        options=tuple(f"option {k}" for k in range(n_options)),
        gt_letter="ABCDEF"[int(rng.integers(n_options))],
        modality="synthetic",
        category=cats[int(rng.integers(n_cats))] if cats else None,
    )
    policy = ToyTemplatePolicy(cats)
    theta = rng.normal(0.0, 1.0, policy.n_params)
    policy.set_params(theta)
    old = policy.with_params(theta + rng.normal(0.0, 0.3, theta.size))
    ref = policy.with_params(theta + rng.normal(0.0, 0.5, theta.size))
    config = GrpoConfig(
        group_size=int(rng.integers(2, 9)),
        clip_eps=float(rng.choice(EPS_CHOICES)),
        kl_beta=float(rng.choice(BETA_CHOICES)),
    )
    responses = [old.sample(record, rng)[0] for _ in range(config.group_size)]
    rewards = rng.choice([0.0, 1.0, 1.5, 2.0], size=config.group_size) + rng.normal(0, 0.1, config.group_size)
    group = RolloutGroup(
        record_id=record.id,
        responses=responses,
        logp_new=[policy.logprob(record, r) for r in responses],
        logp_old=[old.logprob(record, r) for r in responses],
        logp_ref=[ref.logprob(record, r) for r in responses],
        rewards=rewards,
        advantages=grpo_core.group_advantages(rewards, config.std_floor),
        context=record,
    )
    return policy, group, config


def run_trial(trial: int, rng: np.random.Generator, h: float = 1e-6, fault: str | None = None) -> TrialResult:
    policy, group, config = random_instance(rng)
    theta = policy.params()

    analytic = grpo_core.grpo_gradient(group, policy, config)
    if fault == "sign-flip":
        analytic = -analytic
    numeric = central_difference(lambda t: objective_at(t, policy, group, config), theta, h)
    g_err, g_idx = relative_error(analytic, numeric)

    s_err, s_idx = 0.0, -1
    for response in group.responses:
        a = policy.logprob_grad(group.context, response)
        if fault == "sign-flip":
            a = -a
        n = central_difference(lambda t: policy.with_params(t).logprob(group.context, response), theta, h)
        err, idx = relative_error(a, n)
        if err > s_err:
            s_err, s_idx = err, idx
    return TrialResult(trial, g_err, g_idx, s_err, s_idx, config.clip_eps, config.kl_beta)


def run_gradcheck(trials: int = 100, seed: int = 0, h: float = 1e-6, fault: str | None = None
                  ) -> list[TrialResult]:
    rng = np.random.default_rng(seed)
    return [run_trial(i, rng, h, fault) for i in range(trials)]
