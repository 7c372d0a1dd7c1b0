import io
import json

import pytest
from hypothesis import given, strategies as st

from grpolab.reward import (
    EXACT,
    NONE,
    PARTIAL,
    ChoiceSet,
    RewardInputError,
    accuracy_reward,
    format_reward,
    parse_tagged_response,
    score_reward_file,
    score_reward_lines,
    total_reward,
)

from conftest import SHOULDER_RESPONSE, CHEST_OPTIONS, CHEST_RESPONSE
from oracles import constructed_corpus, nested_cases

TAGS = ("<think>", "</think>", "<answer>", "</answer>")


def wf(answer, think="reasoning", sep="\n"):
    return f"<think>{think}</think>{sep}<answer>{answer}</answer>"


# parsing

def test_chest_output_parses_well_formed():
    p = parse_tagged_response(CHEST_RESPONSE)
    assert p.well_formed
    assert p.answer_content == "A"
    assert p.think_content.strip().startswith("The image is a chest X-ray")


def test_empty_string():
    p = parse_tagged_response("")
    assert not p.well_formed
    assert (p.think_open_count, p.think_close_count, p.answer_open_count, p.answer_close_count) == (0, 0, 0, 0)
    assert p.think_content is None and p.answer_content is None
    assert not p.outside_content_present


def test_content_between_blocks_is_outside():
    p = parse_tagged_response("<think>x</think> note <answer>A</answer>")
    assert not p.well_formed
    assert p.outside_content_present


@pytest.mark.parametrize("text", nested_cases("A"))
def test_nested_or_interleaved_is_malformed(text):
    assert not parse_tagged_response(text).well_formed


def test_answer_before_think_is_allowed():
    p = parse_tagged_response("<answer>A</answer>\n<think>x</think>")
    assert p.well_formed and p.answer_content == "A"


def test_spaced_tag_is_plain_text():
    p = parse_tagged_response("< think >x</think><answer>A</answer>")
    assert p.think_open_count == 0
    assert not p.well_formed


def test_empty_blocks_are_well_formed():
    p = parse_tagged_response("<think></think><answer></answer>")
    assert p.well_formed
    assert p.think_content == "" and p.answer_content == ""


def test_counts_are_literal():
    p = parse_tagged_response("<answer>A</answer><answer>B</answer><think>x</think>")
    assert p.answer_open_count == 2 and p.answer_close_count == 2
    assert not p.well_formed


# format reward

def test_format_reward_shoulder():
    assert format_reward(parse_tagged_response(SHOULDER_RESPONSE)) == 1.0


def test_duplicated_answer_tag():
    text = wf("A") + "<answer>A</answer>"
    assert format_reward(parse_tagged_response(text)) == 0.0


@pytest.mark.parametrize("sep", ["", " ", "\n", "\n\n", "\t \r\n"])
def test_whitespace_between_blocks_tolerated(sep):
    assert format_reward(parse_tagged_response(wf("A", sep=sep))) == 1.0
    assert format_reward(parse_tagged_response(f"{sep}{wf('A')}{sep}")) == 1.0


# accuracy reward

@pytest.mark.parametrize("answer,gt,expected", [
    ("B, there is no clear indication of ...", "B", (0.5, PARTIAL)),
    ("A", "A", (1.0, EXACT)),
    (" a ", "A", (1.0, EXACT)),
    ("A.", "A", (1.0, EXACT)),
    ("Lungs", "A", (0.5, PARTIAL)),
    ("A: Lungs", "A", (0.5, PARTIAL)),
    ("  lungs ", "A", (0.5, PARTIAL)),
    ("C", "A", (0.0, NONE)),
    ("C: Brain", "A", (0.0, NONE)),
    ("Brain", "A", (0.0, NONE)),
    ("", "A", (0.0, NONE)),
    ("A,", "A", (0.0, NONE)),
    ("AB", "A", (0.0, NONE)),
    ("A)", "A", (0.0, NONE)),
])
def test_accuracy_rules(answer, gt, expected):
    parsed = parse_tagged_response(wf(answer))
    assert accuracy_reward(parsed, ChoiceSet(CHEST_OPTIONS, gt)) == expected


def test_option_text_whitespace_collapsed():
    choices = ChoiceSet(("Pulmonary nodule", "Effusion"), "A")
    parsed = parse_tagged_response(wf("pulmonary \n  NODULE"))
    assert accuracy_reward(parsed, choices) == (0.5, PARTIAL)


def test_accuracy_requires_well_formed(chest_choices):
    with pytest.raises(RewardInputError):
        accuracy_reward(parse_tagged_response("<answer>A</answer>"), chest_choices)


# total reward

def test_shoulder_breakdown(shoulder_choices):
    b = total_reward(SHOULDER_RESPONSE, shoulder_choices)
    assert (b.format_reward, b.accuracy_reward, b.total, b.match_kind) == (1.0, 0.5, 1.5, PARTIAL)


def test_no_tags_scores_zero(chest_choices):
    assert total_reward("A", chest_choices).total == 0.0


def test_exact_letter_total_two(chest_choices):
    assert total_reward(wf("A"), chest_choices).total == 2.0


def test_ungated_answer_gets_nothing(chest_choices):
    # correct letter, but content outside the tags
    b = total_reward(wf("A") + " done", chest_choices)
    assert (b.format_reward, b.accuracy_reward, b.total) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("gt", ["A", "B", "C", "D"])
def test_constructed_corpus_matches_oracle(gt):
    choices = ChoiceSet(CHEST_OPTIONS, gt)
    n = 0
    for text, expected in constructed_corpus(CHEST_OPTIONS, gt):
        assert total_reward(text, choices).total == expected, text
        n += 1
    assert n > 200


def test_choice_set_bounds():
    with pytest.raises(RewardInputError):
        ChoiceSet(("a",), "A")
    with pytest.raises(RewardInputError):
        ChoiceSet(tuple("abcdefg"), "A")
    with pytest.raises(RewardInputError):
        ChoiceSet(("a", "b"), "C")


# properties

tagless = st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=30)
whitespace = st.text(alphabet=" \t\n\r", max_size=4)
choice_sets = st.integers(2, 6).flatmap(
    lambda n: st.builds(
        ChoiceSet,
        st.just(tuple(f"option {i}" for i in range(n))),
        st.sampled_from("ABCDEF"[:n]),
    )
)


@given(st.text(max_size=60), choice_sets)
def test_range_gating_determinism(text, choices):
    b = total_reward(text, choices)
    assert b == total_reward(text, choices)
    assert b.total in (0.0, 1.0, 1.5, 2.0)
    assert b.total == b.format_reward + b.accuracy_reward
    if b.format_reward == 0.0:
        assert b.total == 0.0


@given(st.lists(st.sampled_from(TAGS + ("x", " ", "A", "\n")), max_size=12).map("".join), choice_sets)
def test_tag_soup_range(text, choices):
    b = total_reward(text, choices)
    assert b.total in (0.0, 1.0, 1.5, 2.0)
    p = parse_tagged_response(text)
    if p.well_formed:
        assert p.think_content is not None and p.answer_content is not None
        assert all(c == 1 for c in (p.think_open_count, p.think_close_count,
                                    p.answer_open_count, p.answer_close_count))


@given(tagless, tagless, whitespace, whitespace, whitespace, st.booleans())
def test_whitespace_glue_always_well_formed(think, answer, pre, mid, post, answer_first):
    t, a = f"<think>{think}</think>", f"<answer>{answer}</answer>"
    text = pre + (a + mid + t if answer_first else t + mid + a) + post
    p = parse_tagged_response(text)
    assert p.well_formed
    assert p.think_content == think and p.answer_content == answer


@given(tagless, st.sampled_from(["A", "B, more", "option 0"]),
       st.characters().filter(lambda c: not c.isspace()))
def test_trailing_character_breaks_format(think, answer, ch):
    text = f"<think>{think}</think>\n<answer>{answer}</answer>"
    assert format_reward(parse_tagged_response(text)) == 1.0
    assert format_reward(parse_tagged_response(text + ch)) == 0.0


# batch format

def test_batch_scoring_mirrors_input():
    lines = [
        json.dumps({"response": SHOULDER_RESPONSE, "options": ["a", "b", "c", "d"], "gt_letter": "B"}),
        json.dumps({"response": "nothing", "options": ["a", "b"], "gt_letter": "A", "extra": 1}),
    ]
    out = list(score_reward_lines(lines))
    assert out[0]["total"] == 1.5 and out[0]["match_kind"] == "partial"
    assert out[0]["response"] == SHOULDER_RESPONSE
    assert out[1]["total"] == 0.0 and out[1]["extra"] == 1


@pytest.mark.parametrize("line,needle", [
    ('{"response": "x", "options": ["a", "b"]}', "gt_letter"),
    ("not json", ""),
    ('{"response": "x", "options": ["a"], "gt_letter": "A"}', "options"),
    ('{"response": "x", "options": ["a", "b"], "gt_letter": "Z"}', "ground truth"),
    ("[1, 2]", "object"),
])
def test_batch_errors_are_per_line(line, needle):
    ok = json.dumps({"response": "<think></think><answer>A</answer>", "options": ["a", "b"], "gt_letter": "A"})
    src = io.StringIO(ok + "\n" + line + "\n" + ok + "\n")
    dst = io.StringIO()
    assert score_reward_file(src, dst) == 1
    rows = [json.loads(r) for r in dst.getvalue().splitlines()]
    assert len(rows) == 3
    assert rows[1]["line"] == 2 and needle in rows[1]["error"]
    assert rows[0]["total"] == rows[2]["total"] == 2.0


def test_batch_empty_file():
    dst = io.StringIO()
    assert score_reward_file(io.StringIO(""), dst) == 0
    assert dst.getvalue() == ""
