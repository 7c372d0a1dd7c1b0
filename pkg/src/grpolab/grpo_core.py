"""Group-relative advantages and the clipped GRPO objective.

Everything here is a pure function of its arguments. Log-probabilities are
whole-sequence quantities: one scalar per sampled response.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Hashable

import numpy as np

# exponent arguments are clamped to this range before exp()
EXP_CLAMP = 30.0


class GrpoError(ValueError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 6
    clip_eps: float = 0.2
    kl_beta: float = 0.04
    std_floor: float = 1e-8
    learning_rate: float = 0.1
    steps: int = 500
    seed: int = 0
    batch_size: int = 2
    old_refresh_every: int = 1
    # optional cap on the update direction's L2 norm; None is plain SGD
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.group_size < 2:
            raise GrpoError(f"group_size must be >= 2, got {self.group_size}")
        if not 0.0 <= self.clip_eps < 1.0:
            raise GrpoError(f"clip_eps must lie in [0, 1), got {self.clip_eps}")
        if self.kl_beta < 0.0:
            raise GrpoError(f"kl_beta must be >= 0, got {self.kl_beta}")
        if not self.std_floor > 0.0:
            raise GrpoError(f"std_floor must be > 0, got {self.std_floor}")
        if self.learning_rate < 0.0:
            raise GrpoError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.steps < 1:
            raise GrpoError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise GrpoError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.old_refresh_every < 1:
            raise GrpoError(f"old_refresh_every must be >= 1, got {self.old_refresh_every}")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0.0:
            raise GrpoError(f"max_grad_norm must be > 0 or None, got {self.max_grad_norm}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GrpoConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class RolloutGroup:
    """G responses sampled for one prompt, with their scores.

    ``context`` is whatever the policy needs to score a response (a
    :class:`~grpolab.dataset.VqaRecord` for the toy policy).
    """

    record_id: Hashable
    responses: list[str]
    logp_new: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray | None = None
    context: Any = field(default=None, repr=False)

    def __post_init__(self):
        g = len(self.responses)
        for name in ("logp_new", "logp_old", "logp_ref", "rewards"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (g,):
                raise GrpoError(f"{name} has shape {arr.shape}, expected ({g},)")
            setattr(self, name, arr)
        if self.advantages is not None:
            self.advantages = np.asarray(self.advantages, dtype=float)
            if self.advantages.shape != (g,):
                raise GrpoError(f"advantages has shape {self.advantages.shape}, expected ({g},)")

    @property
    def size(self) -> int:
        return len(self.responses)


def group_advantages(rewards, std_floor: float = 1e-8) -> np.ndarray:
    """Standardize rewards by the group mean and population std.

    The divisor is ``max(std, std_floor)``; a group of identical rewards
    gets exactly zero advantages.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise GrpoError(f"need a group of at least 2 rewards, got shape {r.shape}")
    if not std_floor > 0:
        raise GrpoError("std_floor must be positive")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    centered = r - r.mean()
    centered -= centered.mean()
    std = np.sqrt(np.mean(centered**2))
    return centered / max(std, std_floor)


def _clamped_exp(x):
    return np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP))


def prob_ratio(logp_new, logp_old):
    """pi_new / pi_old from log-probabilities, with the exponent clamped."""
    out = _clamped_exp(np.subtract(logp_new, logp_old, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def clipped_surrogate(ratio, advantage, eps: float):
    out = np.minimum(
        np.multiply(ratio, advantage),
        np.clip(ratio, 1.0 - eps, 1.0 + eps) * np.asarray(advantage, dtype=float),
    )
    return float(out) if np.ndim(out) == 0 else out


def kl_penalty(logp_new, logp_ref):
    """Per-sample estimator exp(d) - d - 1 with d = logp_ref - logp_new.

    Nonnegative, zero iff the two log-probabilities agree, and unbiased for
    KL(pi_new || pi_ref) when responses are drawn from pi_new.
    """
    d = np.clip(np.subtract(logp_ref, logp_new, dtype=float), -EXP_CLAMP, EXP_CLAMP)
    out = np.maximum(np.expm1(d) - d, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _require_advantages(group: RolloutGroup) -> np.ndarray:
    if group.advantages is None:
        raise GrpoError(f"group {group.record_id!r} has no advantages; call group_advantages first")
    return group.advantages


def per_sample_terms(group: RolloutGroup, config: GrpoConfig) -> dict[str, np.ndarray]:
    adv = _require_advantages(group)
    ratio = prob_ratio(group.logp_new, group.logp_old)
    surrogate = clipped_surrogate(ratio, adv, config.clip_eps)
    kl = kl_penalty(group.logp_new, group.logp_ref)
    return {"ratio": np.atleast_1d(ratio), "surrogate": np.atleast_1d(surrogate),
            "kl": np.atleast_1d(kl)}


def grpo_objective(group: RolloutGroup, config: GrpoConfig) -> float:
    """Mean over the group of clipped surrogate minus beta * KL. Maximize this."""
    t = per_sample_terms(group, config)
    return float(np.mean(t["surrogate"] - config.kl_beta * t["kl"]))


def objective_weights(group: RolloutGroup, config: GrpoConfig) -> np.ndarray:
    """d(objective)/d(logp_new_i) for each sample, old and ref held fixed."""
    adv = _require_advantages(group)
    eps = config.clip_eps
    delta = group.logp_new - group.logp_old
    ratio = _clamped_exp(delta)
    # the unclipped branch carries gradient unless the clipped branch is
    # strictly smaller, which happens only outside [1 - eps, 1 + eps]
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    live = (unclipped <= clipped) & (np.abs(delta) < EXP_CLAMP)
    w_surr = np.where(live, ratio * adv, 0.0)

    d = group.logp_ref - group.logp_new
    # d/dlogp_new of expm1(d) - d is 1 - exp(d); zero where d is clamped
    w_kl = np.where(np.abs(d) < EXP_CLAMP, 1.0 - np.exp(np.clip(d, -EXP_CLAMP, EXP_CLAMP)), 0.0)
    return (w_surr - config.kl_beta * w_kl) / group.size


def grpo_gradient(group: RolloutGroup, policy, config: GrpoConfig) -> np.ndarray:
    """Exact gradient of :func:`grpo_objective` w.r.t. the live policy parameters.

    ``group.logp_new`` must hold the live policy's log-probabilities of the
    responses; ``policy.logprob_grad(group.context, response)`` supplies the
    score function for each one.
    """
    weights = objective_weights(group, config)
    n_params = policy.params().size
    grad = np.zeros(n_params)
    for w, response in zip(weights, group.responses):
        if w == 0.0:
            continue
        g = np.asarray(policy.logprob_grad(group.context, response), dtype=float)
        if g.shape != grad.shape:
            raise GrpoError(
                f"score gradient has shape {g.shape}, parameter vector has {grad.shape}"
            )
        grad += w * g
    return grad


def trace_record(group: RolloutGroup, config: GrpoConfig) -> dict:
    """Plain-data dump of one group for debugging."""
    t = per_sample_terms(group, config)
    return {
        "record_id": group.record_id,
        "rewards": group.rewards.tolist(),
        "advantages": _require_advantages(group).tolist(),
        "logp_new": group.logp_new.tolist(),
        "logp_old": group.logp_old.tolist(),
        "logp_ref": group.logp_ref.tolist(),
        "ratios": t["ratio"].tolist(),
        "surrogate": t["surrogate"].tolist(),
        "kl": t["kl"].tolist(),
        "objective": grpo_objective(group, config),
    }
