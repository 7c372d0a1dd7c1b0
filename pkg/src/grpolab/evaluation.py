"""Strict multiple-choice scoring and per-modality accuracy reports.

Under strict scoring a response counts only if it is well formed and its
answer block holds nothing but the correct letter. Partial matches that earn
training reward score zero here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import VqaRecord, group_by_modality
from .reward import ChoiceSet, parse_tagged_response


def score_strict(response: str, choices: ChoiceSet, case_sensitive: bool = False) -> int:
    parsed = parse_tagged_response(response)
    if not parsed.well_formed:
        return 0
    answer = parsed.answer_content.strip()
    if len(answer) != 1:
        return 0
    if case_sensitive:
        return int(answer == choices.ground_truth)
    return int(answer.upper() == choices.ground_truth.upper())


@dataclass
class ModalityScore:
    n: int
    correct: int

    @property
    def accuracy(self) -> float | None:
        if self.n == 0:
            return None
        return 100.0 * self.correct / self.n


@dataclass
class EvalReport:
    method: str
    modalities: dict[str, ModalityScore]
    verdicts: list[dict] = field(default_factory=list)
    seen_samples: int | None = None
    empty_modalities: list[str] = field(default_factory=list)

    def accuracy(self, modality: str) -> float | None:
        score = self.modalities.get(modality)
        return None if score is None else score.accuracy

    @property
    def average(self) -> float | None:
        """Unweighted mean over modalities that have at least one record."""
        accs = [s.accuracy for s in self.modalities.values() if s.accuracy is not None]
        return average_accuracy(accs) if accs else None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seen_samples": self.seen_samples,
            "modalities": {
                m: {"n": s.n, "correct": s.correct, "accuracy": s.accuracy}
                for m, s in self.modalities.items()
            },
            "average": self.average,
            "empty_modalities": list(self.empty_modalities),
            "verdicts": list(self.verdicts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def average_accuracy(accuracies) -> float:
    accs = [float(a) for a in accuracies]
    if not accs:
        raise ValueError("no accuracies to average")
    return sum(accs) / len(accs)


def evaluate(policy, records, rng: np.random.Generator | None = None, method: str = "",
             greedy: bool = True, case_sensitive: bool = False,
             modalities: list[str] | None = None, seen_samples: int | None = None) -> EvalReport:
    """Score one response per record and tabulate accuracy per modality.

    Greedy decoding uses ``policy.greedy(record)``; otherwise one response is
    drawn with ``policy.sample(record, rng)``. Modalities listed in
    ``modalities`` but absent from ``records`` are reported as empty.
    """
    if not greedy and rng is None:
        raise ValueError("sampled decoding needs an rng")
    grouped = group_by_modality(list(records))
    order = list(modalities) if modalities is not None else list(grouped)
    for m in grouped:
        if m not in order:
            order.append(m)
    scores: dict[str, ModalityScore] = {}
    verdicts = []
    empty = []
    for m in order:
        recs: list[VqaRecord] = grouped.get(m, [])
        if not recs:
            empty.append(m)
        correct = 0
        for rec in recs:
            response = policy.greedy(rec) if greedy else policy.sample(rec, rng)[0]
            parsed = parse_tagged_response(response)
            verdict = score_strict(response, rec.choices, case_sensitive)
            correct += verdict
            verdicts.append({
                "id": rec.id,
                "modality": m,
                "answer": parsed.answer_content if parsed.well_formed else None,
                "verdict": verdict,
            })
        scores[m] = ModalityScore(len(recs), correct)
    return EvalReport(method, scores, verdicts, seen_samples, empty)


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}"


def format_table(reports: list[EvalReport], columns: list[str] | None = None,
                 headers: dict[str, str] | None = None) -> str:
    """Aligned text table: method, seen-sample count, one column per modality, average."""
    if columns is None:
        columns = []
        for rep in reports:
            columns += [m for m in rep.modalities if m not in columns]
    headers = headers or {}
    head = ["Method", "Seen"] + [headers.get(c, c) for c in columns] + ["Average"]
    rows = [head]
    for rep in reports:
        seen = "/" if rep.seen_samples is None else f"{rep.seen_samples:,}"
        rows.append(
            [rep.method, seen] + [_fmt(rep.accuracy(c)) for c in columns] + [_fmt(rep.average)]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = []
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append(" | ".join(cells))
        if k == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
