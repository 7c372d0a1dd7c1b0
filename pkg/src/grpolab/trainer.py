"""GRPO and SFT training loops over record datasets.

Each GRPO step snapshots the live policy as the sampling policy (every
``old_refresh_every`` steps), draws ``group_size`` responses per record in the
batch, scores them with the rule-based reward, standardizes rewards within
each group and takes one gradient-ascent step on the clipped objective. The
reference policy is the initial parameters and never changes.

Randomness comes from streams keyed on ``(seed, step)`` for batch selection
and ``(seed, step, record_id)`` for sampling, so runs are bit-reproducible.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import grpo_core
from .dataset import RecordError, SplitSpec, VqaRecord
from .evaluation import EvalReport, evaluate, format_table
from .grpo_core import GrpoConfig, RolloutGroup
from .policy import STYLES, TEMPLATES, ToyTemplatePolicy, render_response
from .reward import EXACT, total_reward

METRIC_FIELDS = ("step", "mean_reward", "format_rate", "exact_rate", "mean_kl", "objective")


class TrainingAborted(RuntimeError):
    """Raised when the objective or gradient stops being finite."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message if dump is None else f"{message}\n{json.dumps(dump)}")
        self.dump = dump


@dataclass
class TrainState:
    method: str
    step: int
    policy: object
    old_policy: object
    ref_policy: object
    optimizer_state: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed with crc32."""
    entropy = [int(seed) % 2**63]
    for k in keys:
        entropy.append(zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k))
    return np.random.default_rng(entropy)


def select_batch(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    rng = stream(seed, 0xBA7C, step)
    return [int(i) for i in rng.choice(n, size=min(batch_size, n), replace=False)]


def rollout(record: VqaRecord, policy, old_policy, ref_policy, config: GrpoConfig,
            rng: np.random.Generator) -> tuple[RolloutGroup, list]:
    """Sample a group from ``old_policy`` and score it under all three policies."""
    responses, logp_old = [], []
    for _ in range(config.group_size):
        resp, lp = old_policy.sample(record, rng)
        responses.append(resp)
        logp_old.append(lp)
    breakdowns = [total_reward(r, record.choices) for r in responses]
    rewards = np.array([b.total for b in breakdowns])
    group = RolloutGroup(
        record_id=record.id,
        responses=responses,
        logp_new=[policy.logprob(record, r) for r in responses],
        logp_old=logp_old,
        logp_ref=[ref_policy.logprob(record, r) for r in responses],
        rewards=rewards,
        advantages=grpo_core.group_advantages(rewards, config.std_floor),
        context=record,
    )
    return group, breakdowns


def _apply_update(policy, grad: np.ndarray, config: GrpoConfig) -> None:
    norm = float(np.linalg.norm(grad))
    if config.max_grad_norm is not None and norm > config.max_grad_norm:
        grad = grad * (config.max_grad_norm / norm)
    policy.set_params(policy.params() + config.learning_rate * grad)


def train_grpo(dataset: Sequence[VqaRecord], policy, config: GrpoConfig,
               metrics_out: IO[str] | None = None, trace_out: IO[str] | None = None,
               track_expected: bool = True) -> TrainState:
    """Run ``config.steps`` GRPO steps in place on ``policy``.

    Appends one metrics row per step. When ``track_expected`` is set and the
    policy can enumerate its support, rows also carry ``expected_reward``:
    the exact mean reward of the pre-update policy over the batch.
    """
    dataset = list(dataset)
    if not dataset:
        raise RecordError("training dataset is empty")
    ref = policy.snapshot()
    state = TrainState("grpo", 0, policy, policy.snapshot(), ref, {"name": "sgd"})
    for step in range(config.steps):
        if step % config.old_refresh_every == 0:
            state.old_policy = policy.snapshot()
        old = state.old_policy
        batch = select_batch(len(dataset), config.batch_size, config.seed, step)

        grads, objectives, rewards, fmt, exact, kls, expected = [], [], [], [], [], [], []
        for idx in batch:
            record = dataset[idx]
            rng = stream(config.seed, step, record.id)
            group, breakdowns = rollout(record, policy, old, ref, config, rng)
            obj = grpo_core.grpo_objective(group, config)
            grad = grpo_core.grpo_gradient(group, policy, config)
            if trace_out is not None:
                trace_out.write(json.dumps({"step": step, **grpo_core.trace_record(group, config)}) + "\n")
            if not (np.isfinite(obj) and np.all(np.isfinite(grad))):
                raise TrainingAborted(
                    f"non-finite objective or gradient at step {step}, record {record.id!r}",
                    grpo_core.trace_record(group, config),
                )
            grads.append(grad)
            objectives.append(obj)
            rewards.extend(group.rewards)
            fmt.extend(b.format_reward for b in breakdowns)
            exact.extend(b.match_kind == EXACT for b in breakdowns)
            kls.extend(np.atleast_1d(grpo_core.kl_penalty(group.logp_new, group.logp_ref)))
            if track_expected and hasattr(policy, "expected_reward"):
                expected.append(policy.expected_reward(record))

        row = {
            "step": step,
            "mean_reward": float(np.mean(rewards)),
            "format_rate": float(np.mean(fmt)),
            "exact_rate": float(np.mean(exact)),
            "mean_kl": float(np.mean(kls)),
            "objective": float(np.mean(objectives)),
        }
        if expected:
            row["expected_reward"] = float(np.mean(expected))
        state.history.append(row)
        if metrics_out is not None:
            metrics_out.write(json.dumps(row) + "\n")

        if config.learning_rate != 0.0:
            _apply_update(policy, np.mean(grads, axis=0), config)
        state.step = step + 1
    return state


def sft_target(record: VqaRecord) -> str:
    """Well-formed, letter-only response naming the ground truth."""
    return render_response(
        TEMPLATES.index("well_formed"), record.gt_index, STYLES.index("letter_only"), record.options
    )


def train_sft(dataset: Sequence[VqaRecord], policy, config: GrpoConfig,
              metrics_out: IO[str] | None = None) -> TrainState:
    """Gradient descent on the mean negative log-likelihood of :func:`sft_target`.

    Uses the same batch schedule, step count and learning rate as GRPO.
    The logged ``loss`` is the batch NLL before the update.
    """
    dataset = list(dataset)
    if not dataset:
        raise RecordError("training dataset is empty")
    state = TrainState("sft", 0, policy, policy.snapshot(), policy.snapshot(), {"name": "sgd"})
    for step in range(config.steps):
        batch = [dataset[i] for i in select_batch(len(dataset), config.batch_size, config.seed, step)]
        targets = [sft_target(r) for r in batch]
        nll = -np.mean([policy.logprob(r, t) for r, t in zip(batch, targets)])
        grad = np.mean([policy.logprob_grad(r, t) for r, t in zip(batch, targets)], axis=0)
        if not (np.isfinite(nll) and np.all(np.isfinite(grad))):
            raise TrainingAborted(f"non-finite loss or gradient at step {step}",
                                  {"step": step, "records": [r.id for r in batch]})
        row = {"step": step, "loss": float(nll)}
        state.history.append(row)
        if metrics_out is not None:
            metrics_out.write(json.dumps(row) + "\n")
        if config.learning_rate != 0.0:
            _apply_update(policy, grad, config)
        state.step = step + 1
    return state


@dataclass
class ComparisonReport:
    reports: list[EvalReport]
    columns: list[str]
    split: SplitSpec
    has_ood: bool

    def table(self) -> str:
        return format_table(self.reports, self.columns)

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "has_ood": self.has_ood,
            "split_counts": self.split.counts,
            "reports": [r.to_dict() for r in self.reports],
        }


def generalization_experiment(train_split: Sequence[VqaRecord], id_test: Sequence[VqaRecord],
                              ood_test: Sequence[VqaRecord], config: GrpoConfig,
                              categories: Sequence[str] | None = None) -> ComparisonReport:
    """Train GRPO and SFT policies with equal budgets, then score both ID and OOD.

    Rows: the untrained policy, SFT, GRPO. Columns: in-domain modalities
    followed by out-of-domain ones; with no OOD records only ID columns appear.
    """
    split = SplitSpec.from_records(train_split, id_test, ood_test)
    if categories is None:
        categories = sorted({r.category for r in train_split if r.category is not None})
    id_mods = list(dict.fromkeys(r.modality for r in id_test))
    ood_mods = [m for m in dict.fromkeys(r.modality for r in ood_test) if m not in id_mods]
    columns = id_mods + ood_mods
    test = list(id_test) + list(ood_test)
    seen = len(train_split)

    base = ToyTemplatePolicy(categories)
    grpo_policy = ToyTemplatePolicy(categories)
    train_grpo(train_split, grpo_policy, config, track_expected=False)
    sft_policy = ToyTemplatePolicy(categories)
    train_sft(train_split, sft_policy, config)

    reports = [
        evaluate(base, test, method="Untrained", modalities=columns),
        evaluate(sft_policy, test, method="SFT", modalities=columns, seen_samples=seen),
        evaluate(grpo_policy, test, method="GRPO", modalities=columns, seen_samples=seen),
    ]
    return ComparisonReport(reports, columns, split, bool(ood_mods))
