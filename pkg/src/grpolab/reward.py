"""Rule-based reward for tagged multiple-choice responses.

A response earns a format reward of 1 when it holds exactly one
``<think>...</think>`` block and exactly one ``<answer>...</answer>`` block,
the two blocks are disjoint, and only whitespace sits outside them.
Accuracy is checked only after the format passes:

* exact match (1.0): the answer is the ground-truth letter, optionally
  followed by a single period (``"B"``, ``"b"``, ``"B."``);
* partial match (0.5): the ground-truth letter followed by a delimiter and
  more text (``"B, there is no..."``, ``"A: Pulmonary nodule"``), or the
  ground-truth option text on its own (``"Pulmonary nodule"``);
* no match (0.0): anything else.
"""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"

LETTERS = string.ascii_uppercase[:6]
MIN_OPTIONS = 2
MAX_OPTIONS = 6

EXACT = "exact"
PARTIAL = "partial"
NONE = "none"

_EXACT_RE = re.compile(r"([A-Za-z])\.?")
# letter, delimiter run, then at least one character that is not a delimiter
_LETTER_PLUS_RE = re.compile(r"\(?([A-Za-z])[)\]]?[\s,.:;\-)\]]+[^\s,.:;\-)\]]", re.DOTALL)


class RewardInputError(ValueError):
    """Raised when a reward call is made with inputs that break its contract."""


def normalize_text(text: str) -> str:
    """Trim, collapse internal whitespace runs and casefold."""
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class ChoiceSet:
    options: tuple[str, ...]
    ground_truth: str

    def __post_init__(self):
        options = tuple(self.options)
        object.__setattr__(self, "options", options)
        if not MIN_OPTIONS <= len(options) <= MAX_OPTIONS:
            raise RewardInputError(
                f"expected {MIN_OPTIONS}-{MAX_OPTIONS} options, got {len(options)}"
            )
        if self.ground_truth not in self.letters:
            raise RewardInputError(
                f"ground truth {self.ground_truth!r} is not one of {''.join(self.letters)}"
            )

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(LETTERS[: len(self.options)])

    @property
    def ground_truth_text(self) -> str:
        return self.options[LETTERS.index(self.ground_truth)]

    def lettered(self) -> list[tuple[str, str]]:
        return list(zip(self.letters, self.options))


@dataclass(frozen=True)
class ParsedResponse:
    think_content: str | None
    answer_content: str | None
    think_open_count: int
    think_close_count: int
    answer_open_count: int
    answer_close_count: int
    outside_content_present: bool
    well_formed: bool


@dataclass(frozen=True)
class RewardBreakdown:
    format_reward: float
    accuracy_reward: float
    total: float
    match_kind: str


def _first_span(text: str, open_tag: str, close_tag: str) -> tuple[int, int] | None:
    """Span from the first opening tag through the first closing tag after it."""
    start = text.find(open_tag)
    if start < 0:
        return None
    end = text.find(close_tag, start + len(open_tag))
    if end < 0:
        return None
    return start, end + len(close_tag)


def parse_tagged_response(text: str) -> ParsedResponse:
    """Decompose ``text`` into think/answer segments plus tag-validity facts.

    Never raises: malformed input is reported through the returned fields.
    Tag markers are matched byte-literally; ``< think >`` is ordinary text.
    """
    counts = (
        text.count(THINK_OPEN),
        text.count(THINK_CLOSE),
        text.count(ANSWER_OPEN),
        text.count(ANSWER_CLOSE),
    )
    think_span = _first_span(text, THINK_OPEN, THINK_CLOSE)
    answer_span = _first_span(text, ANSWER_OPEN, ANSWER_CLOSE)

    think_content = None
    if think_span is not None:
        think_content = text[think_span[0] + len(THINK_OPEN): think_span[1] - len(THINK_CLOSE)]
    answer_content = None
    if answer_span is not None:
        answer_content = text[answer_span[0] + len(ANSWER_OPEN): answer_span[1] - len(ANSWER_CLOSE)]

    covered = bytearray(len(text))
    for span in (think_span, answer_span):
        if span is not None:
            covered[span[0]: span[1]] = b"\x01" * (span[1] - span[0])
    outside = any(not ch.isspace() for ch, c in zip(text, covered) if not c)

    disjoint = (
        think_span is not None
        and answer_span is not None
        and (think_span[1] <= answer_span[0] or answer_span[1] <= think_span[0])
    )
    well_formed = all(c == 1 for c in counts) and disjoint and not outside

    return ParsedResponse(
        think_content=think_content,
        answer_content=answer_content,
        think_open_count=counts[0],
        think_close_count=counts[1],
        answer_open_count=counts[2],
        answer_close_count=counts[3],
        outside_content_present=outside,
        well_formed=well_formed,
    )


def format_reward(parsed: ParsedResponse) -> float:
    return 1.0 if parsed.well_formed else 0.0


def accuracy_reward(parsed: ParsedResponse, choices: ChoiceSet) -> tuple[float, str]:
    """Score the answer block against the ground truth.

    Only defined for well-formed responses; callers gate on the format first.
    """
    if not parsed.well_formed:
        raise RewardInputError("accuracy_reward requires a well-formed response")
    answer = parsed.answer_content.strip()
    gt = choices.ground_truth.upper()

    m = _EXACT_RE.fullmatch(answer)
    if m is not None:
        if m.group(1).upper() == gt:
            return 1.0, EXACT
        return 0.0, NONE

    m = _LETTER_PLUS_RE.match(answer)
    if m is not None and m.group(1).upper() == gt:
        return 0.5, PARTIAL
    if answer and normalize_text(answer) == normalize_text(choices.ground_truth_text):
        return 0.5, PARTIAL
    return 0.0, NONE


def total_reward(text: str, choices: ChoiceSet) -> RewardBreakdown:
    parsed = parse_tagged_response(text)
    fmt = format_reward(parsed)
    if fmt == 0.0:
        return RewardBreakdown(0.0, 0.0, 0.0, NONE)
    acc, kind = accuracy_reward(parsed, choices)
    return RewardBreakdown(fmt, acc, fmt + acc, kind)


def score_reward_lines(lines: Iterable[str]) -> Iterator[dict]:
    """Score newline-delimited reward requests.

    Each input line is an object with ``response``, ``options`` and
    ``gt_letter``. Yields one output object per input line: the input
    fields plus the reward breakdown, or ``{"line": n, "error": ...}`` when
    the line cannot be scored. Blank lines are treated as malformed records.
    """
    for lineno, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise RewardInputError("record must be a JSON object")
            missing = [k for k in ("response", "options", "gt_letter") if k not in obj]
            if missing:
                raise RewardInputError(f"missing field(s): {', '.join(missing)}")
            if not isinstance(obj["response"], str):
                raise RewardInputError("'response' must be a string")
            if not isinstance(obj["options"], list) or not all(
                isinstance(o, str) for o in obj["options"]
            ):
                raise RewardInputError("'options' must be an array of strings")
            choices = ChoiceSet(tuple(obj["options"]), obj["gt_letter"])
            breakdown = total_reward(obj["response"], choices)
        except (ValueError, TypeError) as exc:
            yield {"line": lineno, "error": str(exc)}
            continue
        yield {
            **obj,
            "format_reward": breakdown.format_reward,
            "accuracy_reward": breakdown.accuracy_reward,
            "total": breakdown.total,
            "match_kind": breakdown.match_kind,
        }


def score_reward_file(src: IO[str], dst: IO[str]) -> int:
    """Stream ``src`` through :func:`score_reward_lines`; return the error count."""
    errors = 0
    for out in score_reward_lines(line.rstrip("\n") for line in src):
        if "error" in out and "total" not in out:
            errors += 1
        dst.write(json.dumps(out) + "\n")
    return errors
