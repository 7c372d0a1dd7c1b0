"""Stochastic policies over tagged responses.

:class:`ToyTemplatePolicy` stands in for a vision-language model. It picks a
response skeleton, an option letter and an answer style from three
independent softmax heads and renders them into a string, so its whole
support (at most 4 x 6 x 3 strings per record) can be enumerated and every
probability and gradient checked exactly.

Each head's logits are ``bias + weight @ phi(record)``, where ``phi`` is a
one-hot encoding of ``record.category`` over the policy's category alphabet
(empty alphabet: context-free policy, ``phi`` has length 0).
"""
from __future__ import annotations

import functools
import json
import os
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .reward import LETTERS, MAX_OPTIONS, total_reward

TEMPLATES = ("well_formed", "missing_think_close", "content_outside_tags", "duplicated_answer_tag")
STYLES = ("letter_only", "letter_plus_explanation", "option_text_only")
HEADS = ("template", "letter", "style")
HEAD_SIZES = (len(TEMPLATES), MAX_OPTIONS, len(STYLES))

THINK_FILLER = "The image shows the structures named in the question. Compare them with each option."
EXPLANATION = "the visible findings are consistent with this option."

CHECKPOINT_FORMAT = "grpolab.toy_policy/1"


class PolicyError(ValueError):
    pass


class Policy(Protocol):
    def sample(self, context, rng: np.random.Generator) -> tuple[str, float]: ...
    def logprob(self, context, response: str) -> float: ...
    def logprob_grad(self, context, response: str) -> np.ndarray: ...
    def params(self) -> np.ndarray: ...
    def snapshot(self) -> "Policy": ...


def render_answer(letter: int, style: int, options: Sequence[str]) -> str:
    L = LETTERS[letter]
    if STYLES[style] == "letter_only":
        return L
    if STYLES[style] == "letter_plus_explanation":
        return f"{L}, {EXPLANATION}"
    return options[letter]


def render_response(template: int, letter: int, style: int, options: Sequence[str]) -> str:
    ans = render_answer(letter, style, options)
    think = f"<think>\n{THINK_FILLER}\n</think>"
    name = TEMPLATES[template]
    if name == "well_formed":
        return f"{think}\n<answer>{ans}</answer>"
    if name == "missing_think_close":
        return f"<think>\n{THINK_FILLER}\n<answer>{ans}</answer>"
    if name == "content_outside_tags":
        return f"{think}\nMy final choice follows.\n<answer>{ans}</answer>"
    return f"{think}\n<answer>{ans}</answer>\n<answer>{ans}</answer>"


def outcomes(n_options: int) -> list[tuple[int, int, int]]:
    return [
        (t, l, s)
        for t in range(len(TEMPLATES))
        for l in range(n_options)
        for s in range(len(STYLES))
    ]


@functools.lru_cache(maxsize=4096)
def _support(options: tuple[str, ...]) -> dict[str, tuple[tuple[int, int, int], ...]]:
    table: dict[str, list] = {}
    for o in outcomes(len(options)):
        table.setdefault(render_response(*o, options), []).append(o)
    return {k: tuple(v) for k, v in table.items()}


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    return z - (m + np.log(np.sum(np.exp(z - m))))


class ToyTemplatePolicy:
    def __init__(self, categories: Sequence[str] = (), theta=None, frozen: bool = False):
        self.categories = tuple(categories)
        if len(set(self.categories)) != len(self.categories):
            raise PolicyError("duplicate category labels")
        self._cat_index = {c: i for i, c in enumerate(self.categories)}
        d = len(self.categories)
        self._slices = {}
        offset = 0
        for name, n in zip(HEADS, HEAD_SIZES):
            self._slices[name + ".bias"] = (slice(offset, offset + n), (n,))
            offset += n
            self._slices[name + ".weight"] = (slice(offset, offset + n * d), (n, d))
            offset += n * d
        self.n_params = offset
        if theta is None:
            theta = np.zeros(offset)
        self._theta = np.array(theta, dtype=float)
        if self._theta.shape != (offset,):
            raise PolicyError(f"parameter vector has shape {self._theta.shape}, expected ({offset},)")
        self.frozen = frozen

    # parameters

    def params(self) -> np.ndarray:
        return self._theta.copy()

    def set_params(self, theta) -> None:
        if self.frozen:
            raise PolicyError("cannot update a frozen snapshot")
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self._theta.shape:
            raise PolicyError(f"parameter vector has shape {theta.shape}, expected {self._theta.shape}")
        self._theta = theta.copy()

    def _arrays(self) -> dict[str, np.ndarray]:
        return {name: self._theta[sl].reshape(shape) for name, (sl, shape) in self._slices.items()}

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self._arrays().items()}

    def snapshot(self) -> "ToyTemplatePolicy":
        return ToyTemplatePolicy(self.categories, self._theta.copy(), frozen=True)

    def with_params(self, theta) -> "ToyTemplatePolicy":
        return ToyTemplatePolicy(self.categories, theta, frozen=False)

    # distributions

    def features(self, record) -> np.ndarray:
        phi = np.zeros(len(self.categories))
        idx = self._cat_index.get(getattr(record, "category", None))
        if idx is not None:
            phi[idx] = 1.0
        return phi

    def head_logprobs(self, record) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Log-probabilities of each head; masked letters are ``-inf``."""
        phi = self.features(record)
        arrays = self._arrays()
        out = []
        for name in HEADS:
            z = arrays[name + ".bias"] + arrays[name + ".weight"] @ phi
            if name == "letter":
                n = len(record.options)
                lp = np.full(MAX_OPTIONS, -np.inf)
                lp[:n] = _log_softmax(z[:n])
                out.append(lp)
            else:
                out.append(_log_softmax(z))
        return tuple(out)

    def outcome_logprob(self, record, outcome) -> float:
        lt, ll, ls = self.head_logprobs(record)
        t, l, s = outcome
        return float(lt[t] + ll[l] + ls[s])

    def outcome_grad(self, record, outcome) -> np.ndarray:
        """Score function of one (template, letter, style) outcome."""
        phi = self.features(record)
        grad = np.zeros(self.n_params)
        for name, lp, k in zip(HEADS, self.head_logprobs(record), outcome):
            g = -np.exp(lp)
            g[k] += 1.0
            sl, _ = self._slices[name + ".bias"]
            grad[sl] = g
            sl, _ = self._slices[name + ".weight"]
            grad[sl] = np.outer(g, phi).ravel()
        return grad

    def sample_outcomes(self, record, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` outcomes as an integer array of shape (size, 3)."""
        cols = []
        for lp in self.head_logprobs(record):
            cdf = np.cumsum(np.exp(lp))
            u = rng.random(size) * cdf[-1]
            cols.append(np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
        return np.stack(cols, axis=1)

    def support(self, record) -> dict[str, tuple[tuple[int, int, int], ...]]:
        return _support(tuple(record.options))

    def sample(self, record, rng: np.random.Generator) -> tuple[str, float]:
        t, l, s = (int(x) for x in self.sample_outcomes(record, rng, 1)[0])
        response = render_response(t, l, s, record.options)
        return response, self.logprob(record, response)

    def logprob(self, record, response: str) -> float:
        """Log-probability of the string; ``-inf`` outside the support."""
        outs = self.support(record).get(response)
        if outs is None:
            return -np.inf
        lt, ll, ls = self.head_logprobs(record)
        vals = [lt[t] + ll[l] + ls[s] for t, l, s in outs]
        return float(np.logaddexp.reduce(vals))

    def logprob_grad(self, record, response: str) -> np.ndarray:
        outs = self.support(record).get(response)
        if outs is None:
            raise PolicyError("response is outside the policy's support")
        if len(outs) == 1:
            return self.outcome_grad(record, outs[0])
        lps = np.array([self.outcome_logprob(record, o) for o in outs])
        w = np.exp(lps - np.logaddexp.reduce(lps))
        return sum(wi * self.outcome_grad(record, o) for wi, o in zip(w, outs))

    def enumerate(self, record) -> list[tuple[str, float]]:
        """Every renderable response with its log-probability."""
        return [(resp, self.logprob(record, resp)) for resp in self.support(record)]

    def greedy(self, record) -> str:
        """Render the most probable outcome; ties go to the lowest index."""
        t, l, s = (int(np.argmax(lp)) for lp in self.head_logprobs(record))
        return render_response(t, l, s, record.options)

    def expected_reward(self, record) -> float:
        return float(sum(
            np.exp(lp) * total_reward(resp, record.choices).total
            for resp, lp in self.enumerate(record)
        ))

    def exact_kl(self, other: "ToyTemplatePolicy", record) -> float:
        """KL(self || other) for one record; the heads factorize so KLs add."""
        total = 0.0
        for p_lp, q_lp in zip(self.head_logprobs(record), other.head_logprobs(record)):
            mask = np.isfinite(p_lp)
            total += float(np.sum(np.exp(p_lp[mask]) * (p_lp[mask] - q_lp[mask])))
        return total


def oracle_policy(records, categories: Sequence[str] | None = None, strength: float = 25.0
                  ) -> ToyTemplatePolicy:
    """A policy whose greedy output is the well-formed, letter-only ground truth.

    Context-free when every record shares one answer letter; otherwise keyed
    on ``record.category``, which must then determine the answer.
    """
    gts = {r.gt_letter for r in records}
    if categories is None:
        categories = () if len(gts) == 1 else sorted({r.category for r in records if r.category})
    pol = ToyTemplatePolicy(categories)
    arrays = pol.named_arrays()
    arrays["template.bias"][TEMPLATES.index("well_formed")] = strength
    arrays["style.bias"][STYLES.index("letter_only")] = strength
    if not categories:
        if len(gts) != 1:
            raise PolicyError("a context-free oracle needs a single answer letter")
        arrays["letter.bias"][LETTERS.index(gts.pop())] = strength
    else:
        idx = {c: i for i, c in enumerate(categories)}
        seen: dict[str, str] = {}
        for r in records:
            if seen.setdefault(r.category, r.gt_letter) != r.gt_letter:
                raise PolicyError(f"category {r.category!r} maps to more than one answer")
            if r.category not in idx:
                raise PolicyError(f"category {r.category!r} not in the policy alphabet")
            arrays["letter.weight"][LETTERS.index(r.gt_letter), idx[r.category]] = strength
    theta = np.concatenate([arrays[name].ravel() for name in pol._slices])
    return pol.with_params(theta)


def forced_format_policy(categories: Sequence[str] = (), strength: float = 25.0) -> ToyTemplatePolicy:
    """Always well-formed and letter-only, with a uniform letter head."""
    pol = ToyTemplatePolicy(categories)
    arrays = pol.named_arrays()
    arrays["template.bias"][TEMPLATES.index("well_formed")] = strength
    arrays["style.bias"][STYLES.index("letter_only")] = strength
    return pol.with_params(np.concatenate([arrays[n].ravel() for n in pol._slices]))


def save_policy(policy: ToyTemplatePolicy, path: str | os.PathLike) -> None:
    """Write parameters as named arrays in JSON; float repr keeps them exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "categories": list(policy.categories),
        "arrays": [
            {"name": name, "shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in policy.named_arrays().items()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_policy(path: str | os.PathLike) -> ToyTemplatePolicy:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise PolicyError(f"unsupported checkpoint format {doc.get('format')!r}")
    pol = ToyTemplatePolicy(doc["categories"])
    expected = {name: shape for name, (_, shape) in pol._slices.items()}
    chunks = []
    for entry in doc["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise PolicyError(f"array {name!r} has shape {shape}, expected {expected.get(name)}")
        values = np.asarray(entry["values"], dtype=float)
        if values.size != int(np.prod(shape)):
            raise PolicyError(f"array {name!r} holds {values.size} values for shape {shape}")
        chunks.append((name, values))
    if [n for n, _ in chunks] != list(pol._slices):
        raise PolicyError("checkpoint arrays are missing or out of order")
    return pol.with_params(np.concatenate([v for _, v in chunks]))
