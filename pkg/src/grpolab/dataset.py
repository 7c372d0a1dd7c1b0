"""Multiple-choice VQA records, prompt rendering and synthetic task families.

Records are stored one JSON object per line with the fields ``id``,
``image_ref``, ``question``, ``options``, ``gt_letter``, ``modality`` and
``category``. Option letters are never stored: they follow list position
(first option is ``A``).

Converting an external benchmark means writing exactly these fields; the
image is referenced, never embedded, and ``category`` may be ``null``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .reward import LETTERS, MAX_OPTIONS, MIN_OPTIONS, ChoiceSet

RECORD_FIELDS = ("id", "image_ref", "question", "options", "gt_letter", "modality", "category")

PROMPT_INSTRUCTIONS = (
    " Your task:\n"
    "1. Think through the question step by step, enclose your reasoning process "
    "in <think>...</think> tags.\n"
    "2. Then provide the correct single-letter choice (A, B, C, D,...) inside "
    "<answer>...</answer> tags.\n"
    "3. No extra information or text outside of these tags."
)


class RecordError(ValueError):
    """A record, file or split failed validation."""


@dataclass(frozen=True)
class VqaRecord:
    id: str
    question: str
    options: tuple[str, ...]
    gt_letter: str
    modality: str
    image_ref: str = ""
    category: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not isinstance(self.id, str) or not self.id:
            raise RecordError("record id must be a non-empty string")
        if not MIN_OPTIONS <= len(self.options) <= MAX_OPTIONS:
            raise RecordError(
                f"record {self.id!r}: expected {MIN_OPTIONS}-{MAX_OPTIONS} options, "
                f"got {len(self.options)}"
            )
        if not all(isinstance(o, str) for o in self.options):
            raise RecordError(f"record {self.id!r}: options must be strings")
        if self.gt_letter not in LETTERS[: len(self.options)]:
            raise RecordError(
                f"record {self.id!r}: gt_letter {self.gt_letter!r} out of range "
                f"A-{LETTERS[len(self.options) - 1]}"
            )

    @property
    def choices(self) -> ChoiceSet:
        return ChoiceSet(self.options, self.gt_letter)

    @property
    def gt_index(self) -> int:
        return LETTERS.index(self.gt_letter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["options"] = list(self.options)
        return {k: d[k] for k in RECORD_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "VqaRecord":
        missing = [k for k in RECORD_FIELDS if k not in d and k != "category"]
        if missing:
            raise RecordError(f"missing field(s): {', '.join(missing)}")
        unknown = sorted(set(d) - set(RECORD_FIELDS))
        if unknown:
            raise RecordError(f"unknown field(s): {', '.join(unknown)}")
        if not isinstance(d["options"], list):
            raise RecordError("'options' must be an array")
        return cls(
            id=d["id"],
            question=d["question"],
            options=tuple(d["options"]),
            gt_letter=d["gt_letter"],
            modality=d["modality"],
            image_ref=d["image_ref"],
            category=d.get("category"),
        )


def _read_lines(source) -> list[str]:
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_text(encoding="utf-8").splitlines()
    if hasattr(source, "read"):
        return source.read().splitlines()
    return [line.rstrip("\n") for line in source]


def load_records(source) -> list[VqaRecord]:
    """Read and validate records from a path, an open file or an iterable of lines.

    Blank lines are skipped. All problems are collected and raised together
    as one :class:`RecordError` whose message cites each line number.
    """
    records, errors, seen = [], [], {}
    for lineno, line in enumerate(_read_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise RecordError("record must be a JSON object")
            rec = VqaRecord.from_dict(obj)
        except (ValueError, TypeError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if rec.id in seen:
            errors.append(f"line {lineno}: duplicate id {rec.id!r} (first seen on line {seen[rec.id]})")
            continue
        seen[rec.id] = lineno
        records.append(rec)
    if errors:
        raise RecordError("; ".join(errors))
    return records


def dump_records(records: Iterable[VqaRecord], dst: IO[str] | str | os.PathLike) -> None:
    lines = "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)
    if isinstance(dst, (str, os.PathLike)):
        Path(dst).write_text(lines, encoding="utf-8")
    else:
        dst.write(lines)


def question_block(record: VqaRecord) -> str:
    opts = " ".join(f"{letter}) {text}" for letter, text in zip(LETTERS, record.options))
    return f"{record.question}\n{opts}"


def render_prompt(record: VqaRecord) -> str:
    """Question, lettered options, then the fixed three-step instruction block."""
    return question_block(record) + PROMPT_INSTRUCTIONS


@dataclass(frozen=True)
class SplitSpec:
    train: frozenset
    id_test: frozenset
    ood_test: frozenset

    def __post_init__(self):
        names = ("train", "id_test", "ood_test")
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                shared = getattr(self, a) & getattr(self, b)
                if shared:
                    sample = ", ".join(sorted(map(str, shared))[:5])
                    raise RecordError(f"splits {a} and {b} share {len(shared)} id(s): {sample}")

    @classmethod
    def from_records(cls, train, id_test, ood_test) -> "SplitSpec":
        return cls(
            frozenset(r.id for r in train),
            frozenset(r.id for r in id_test),
            frozenset(r.id for r in ood_test),
        )

    @property
    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "id_test": len(self.id_test), "ood_test": len(self.ood_test)}


@dataclass(frozen=True)
class FamilySpec:
    """Recipe for a synthetic task family.

    Each latent category has a fixed correct answer text; the letter under
    which it appears is ``category_gt[category]``. ``shift`` is the fraction
    of categories whose surface label and option wording are remapped, which
    keeps the category-to-answer rule but breaks any policy that memorised
    the surface label.
    """

    name: str
    categories: tuple[str, ...]
    answer_texts: dict[str, str]
    distractors: tuple[str, ...]
    category_gt: dict[str, str]
    n_options: int = 4
    shift: float = 0.0
    modality: str | None = None
    question: str = "What can be observed in this image?"
    id_prefix: str = ""

    def __post_init__(self):
        if not MIN_OPTIONS <= self.n_options <= MAX_OPTIONS:
            raise RecordError(f"n_options must be in [{MIN_OPTIONS}, {MAX_OPTIONS}]")
        if not 0.0 <= self.shift <= 1.0:
            raise RecordError("shift must lie in [0, 1]")
        for c in self.categories:
            if c not in self.answer_texts or c not in self.category_gt:
                raise RecordError(f"category {c!r} lacks an answer text or gt letter")
            if self.category_gt[c] not in LETTERS[: self.n_options]:
                raise RecordError(f"category {c!r}: gt letter out of range")
        if len(set(self.distractors)) < self.n_options - 1:
            raise RecordError("not enough distinct distractors")

    def shifted(self, shift: float, modality: str, id_prefix: str | None = None) -> "FamilySpec":
        d = {**self.__dict__, "shift": shift, "modality": modality}
        if id_prefix is not None:
            d["id_prefix"] = id_prefix
        return FamilySpec(**d)

    def surface_map(self) -> dict[str, str]:
        """Latent category -> observed label; the first ``shift`` share is rotated."""
        k = int(round(self.shift * len(self.categories)))
        moved = list(self.categories[:k])
        rotated = moved[1:] + moved[:1] if k > 1 else moved
        out = {c: c for c in self.categories}
        for src, dst in zip(moved, rotated):
            out[src] = dst
        return out

    def remapped(self) -> set[str]:
        return set(self.categories[: int(round(self.shift * len(self.categories)))])


def generate_synthetic_family(spec: FamilySpec, n: int, seed: int) -> list[VqaRecord]:
    """Draw ``n`` records, stratified so categories appear as evenly as possible.

    The ground-truth letter is a deterministic function of the latent
    category. Categories whose surface label is remapped also get shifted
    option wording (upper-cased answer and distractor texts).
    """
    if n <= 0:
        raise RecordError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    k = len(spec.categories)
    latent = [spec.categories[i % k] for i in range(n)]
    latent = [latent[i] for i in rng.permutation(n)]
    surface = spec.surface_map()
    remapped = spec.remapped()
    modality = spec.modality or spec.name
    prefix = spec.id_prefix or f"{spec.name}-{modality}"
    pool = list(spec.distractors)
    records = []
    for i, cat in enumerate(latent):
        gt = spec.category_gt[cat]
        gt_idx = LETTERS.index(gt)
        picks = rng.choice(len(pool), size=spec.n_options - 1, replace=False)
        options = [pool[j] for j in picks]
        options.insert(gt_idx, spec.answer_texts[cat])
        if cat in remapped:
            options = [o.upper() for o in options]
        records.append(
            VqaRecord(
                id=f"{prefix}-{i:05d}",
                question=spec.question,
                options=tuple(options),
                gt_letter=gt,
                modality=modality,
                image_ref=f"synthetic://{spec.name}/{cat}/{i}",
                category=surface[cat],
            )
        )
    return records


def default_family(n_options: int = 4) -> FamilySpec:
    """A four-category family whose answers sit under different letters."""
    cats = ("alpha", "beta", "gamma", "delta")
    return FamilySpec(
        name="organs",
        categories=cats,
        answer_texts={"alpha": "Lungs", "beta": "Bladder", "gamma": "Brain", "delta": "Heart"},
        distractors=("Liver", "Kidney", "Spleen", "Stomach", "Pancreas", "Colon", "Spine"),
        category_gt=dict(zip(cats, LETTERS[: min(4, n_options)] * 4)),
        n_options=n_options,
        modality="MRI",
    )


def bandit_records(n: int = 8, gt_letter: str = "B", n_options: int = 4) -> list[VqaRecord]:
    """Identical-question records with a fixed answer, for context-free training."""
    options = ("Cartilage degeneration", "Labral pathology", "Bone fracture", "Tendonitis",
               "Joint effusion", "Bursitis")[:n_options]
    return [
        VqaRecord(
            id=f"bandit-{i:03d}",
            question="What can be observed in this image?",
            options=options,
            gt_letter=gt_letter,
            modality="MRI",
            image_ref=f"synthetic://bandit/{i}",
        )
        for i in range(n)
    ]


BUILTIN_DATASETS = {"bandit": bandit_records}


def resolve_dataset(ref: str) -> list[VqaRecord]:
    """Load ``builtin:<name>`` datasets or a JSONL path."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_DATASETS:
            raise RecordError(f"unknown builtin dataset {name!r}")
        return BUILTIN_DATASETS[name]()
    return load_records(ref)


def group_by_modality(records: Sequence[VqaRecord]) -> dict[str, list[VqaRecord]]:
    out: dict[str, list[VqaRecord]] = {}
    for r in records:
        out.setdefault(r.modality, []).append(r)
    return out
