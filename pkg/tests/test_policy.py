import math

import numpy as np
import pytest

from grpolab.dataset import VqaRecord
from grpolab.gradcheck import central_difference, relative_error
from grpolab.policy import (
    STYLES,
    TEMPLATES,
    PolicyError,
    ToyTemplatePolicy,
    forced_format_policy,
    load_policy,
    oracle_policy,
    render_response,
    save_policy,
)
from grpolab.reward import parse_tagged_response, total_reward

REC4 = VqaRecord("p4", "q", ("Lungs", "Bladder", "Brain", "Heart"), "B", "MRI", category="b")
REC2 = VqaRecord("p2", "q", ("Yes", "No"), "A", "CT", category="a")


def random_policy(seed, cats=("a", "b")):
    pol = ToyTemplatePolicy(cats)
    pol.set_params(np.random.default_rng(seed).normal(0, 1.5, pol.n_params))
    return pol


def test_uniform_logp():
    pol = ToyTemplatePolicy()
    rng = np.random.default_rng(0)
    for _ in range(20):
        _, lp = pol.sample(REC4, rng)
        assert lp == pytest.approx(math.log(1 / 48), abs=1e-12)


def test_render_parse_roundtrip():
    text = render_response(TEMPLATES.index("well_formed"), 1, STYLES.index("letter_only"), REC4.options)
    p = parse_tagged_response(text)
    assert p.well_formed and p.answer_content == "B"


@pytest.mark.parametrize("template", TEMPLATES[1:])
def test_malformed_templates_score_zero(template):
    for letter in range(4):
        for style in range(3):
            text = render_response(TEMPLATES.index(template), letter, style, REC4.options)
            assert total_reward(text, REC4.choices).format_reward == 0.0


def test_support_is_injective_for_distinct_options():
    pol = ToyTemplatePolicy()
    assert len(pol.support(REC4)) == 48
    assert len(pol.support(REC2)) == 24


@pytest.mark.parametrize("rec", [REC4, REC2])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_normalization(rec, seed):
    pol = random_policy(seed)
    total = sum(math.exp(lp) for _, lp in pol.enumerate(rec))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_sampled_logp_matches_scorer():
    pol = random_policy(4)
    rng = np.random.default_rng(1)
    for _ in range(50):
        resp, lp = pol.sample(REC4, rng)
        assert abs(pol.logprob(REC4, resp) - lp) <= 1e-12


def test_out_of_support():
    pol = ToyTemplatePolicy()
    assert pol.logprob(REC4, "<think></think><answer>B</answer>") == -math.inf
    with pytest.raises(PolicyError):
        pol.logprob_grad(REC4, "nope")


def test_uniform_head_gradient_closed_form():
    pol = ToyTemplatePolicy()
    t, l, s = TEMPLATES.index("content_outside_tags"), 2, STYLES.index("option_text_only")
    g = pol.logprob_grad(REC4, render_response(t, l, s, REC4.options))
    arrays = {}
    offset = 0
    for name, n in (("template", 4), ("letter", 6), ("style", 3)):
        arrays[name] = g[offset: offset + n]
        offset += n
    np.testing.assert_allclose(arrays["template"], [-0.25, -0.25, 0.75, -0.25], atol=1e-15)
    np.testing.assert_allclose(arrays["letter"], [-0.25, -0.25, 0.75, -0.25, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(arrays["style"], [-1 / 3, -1 / 3, 2 / 3], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_score_gradient_finite_differences(seed):
    pol = random_policy(seed)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        rec = REC4 if rng.random() < 0.5 else REC2
        resp, _ = pol.sample(rec, rng)
        a = pol.logprob_grad(rec, resp)
        n = central_difference(lambda t: pol.with_params(t).logprob(rec, resp), pol.params())
        assert relative_error(a, n)[0] <= 1e-6


def test_gradient_heads_sum_to_zero_and_masking():
    pol = random_policy(7)
    rng = np.random.default_rng(7)
    resp, _ = pol.sample(REC2, rng)
    g = pol.named_arrays()
    grad = pol.logprob_grad(REC2, resp)
    offset = 0
    for name in ("template", "letter", "style"):
        n = g[name + ".bias"].size
        head = grad[offset: offset + n]
        assert abs(head.sum()) < 1e-12
        if name == "letter":
            assert np.all(head[2:] == 0.0)
            w = grad[offset + n: offset + n + g[name + ".weight"].size].reshape(6, 2)
            assert np.all(w[2:] == 0.0)
        offset += n + g[name + ".weight"].size
    assert np.all(np.exp(pol.head_logprobs(REC2)[1][2:]) == 0.0)


def test_context_free_record_ignores_weights():
    pol = random_policy(3)
    rec = VqaRecord("u", "q", REC4.options, "A", "MRI", category="unseen")
    bias_only = ToyTemplatePolicy(("a", "b"))
    theta = pol.params()
    for name, arr in pol.named_arrays().items():
        if name.endswith(".weight"):
            sl = bias_only._slices[name][0]
            theta[sl] = 0.0
    bias_only.set_params(theta)
    for resp, lp in pol.enumerate(rec):
        assert lp == bias_only.logprob(rec, resp)


def test_sampler_frequencies_match_probabilities():
    pol = random_policy(11, cats=())
    rng = np.random.default_rng(5)
    n = 100_000
    draws = pol.sample_outcomes(REC4, rng, n)
    keys, counts = np.unique(draws, axis=0, return_counts=True)
    observed = {tuple(k): c for k, c in zip(keys, counts)}
    for t in range(4):
        for l in range(4):
            for s in range(3):
                p = math.exp(pol.outcome_logprob(REC4, (t, l, s)))
                se = math.sqrt(n * p * (1 - p))
                assert abs(observed.get((t, l, s), 0) - n * p) <= 3 * se + 1e-9
    assert draws[:, 1].max() < 4


def test_snapshot_isolation():
    pol = random_policy(2)
    snap = pol.snapshot()
    resp = pol.greedy(REC4)
    before = pol.logprob(REC4, resp)
    assert snap.logprob(REC4, resp) == before
    pol.set_params(pol.params() + 1.0)
    assert snap.logprob(REC4, resp) == before
    assert snap.snapshot().logprob(REC4, resp) == before
    with pytest.raises(PolicyError):
        snap.set_params(snap.params())


def test_checkpoint_roundtrip(tmp_path):
    pol = random_policy(9, cats=("a", "b", "c"))
    path = tmp_path / "ckpt.json"
    save_policy(pol, path)
    back = load_policy(path)
    assert back.categories == pol.categories
    assert np.array_equal(back.params(), pol.params())


def test_checkpoint_rejects_bad_shape(tmp_path):
    import json
    path = tmp_path / "ckpt.json"
    save_policy(ToyTemplatePolicy(("a",)), path)
    doc = json.loads(path.read_text())
    doc["categories"] = ["a", "b"]
    path.write_text(json.dumps(doc))
    with pytest.raises(PolicyError):
        load_policy(path)


def test_exact_kl():
    pol, ref = random_policy(1), random_policy(2)
    brute = sum(math.exp(lp) * (lp - ref.logprob(REC4, r)) for r, lp in pol.enumerate(REC4))
    assert pol.exact_kl(ref, REC4) == pytest.approx(brute, rel=1e-10)
    assert pol.exact_kl(pol, REC4) == 0.0


def test_oracle_and_forced_policies():
    recs = [REC4, REC2]
    orc = oracle_policy(recs)
    for rec in recs:
        assert total_reward(orc.greedy(rec), rec.choices).total == 2.0
    forced = forced_format_policy()
    lt, ll, ls = forced.head_logprobs(REC4)
    assert np.exp(lt[0]) > 1 - 1e-9 and np.exp(ls[0]) > 1 - 1e-9
    np.testing.assert_allclose(np.exp(ll[:4]), 0.25)


def test_expected_reward_uniform():
    # 1/4 well formed; within it: GT letter 1/4 with styles (2, 1.5, 1.5), else 1
    expected = 0.25 * (0.25 * (2 + 1.5 + 1.5) / 3 + 0.75 * 1.0)
    assert ToyTemplatePolicy().expected_reward(REC4) == pytest.approx(expected, abs=1e-12)
