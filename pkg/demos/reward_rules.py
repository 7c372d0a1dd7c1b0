"""
Scoring tagged answers with the rule-based reward
=================================================

A response earns one point for the ``<think>``/``<answer>`` layout and up
to one more for its answer. The answer is only read when the layout is
right.
"""

from grpolab.reward import ChoiceSet, total_reward

choices = ChoiceSet(("Cartilage degeneration", "Labral pathology", "Bone fracture", "Tendonitis"), "B")

# %%
# A tidy single letter gets the full two points; extra words after the
# letter only earn half the accuracy point.

responses = {
    "letter": "<think>the labrum looks torn</think>\n<answer>B</answer>",
    "letter + prose": "<think>...</think><answer>B, there is no clear indication of ... </answer>",
    "option text": "<think>...</think><answer>labral pathology</answer>",
    "wrong letter": "<think>...</think><answer>C</answer>",
    "missing think": "<answer>B</answer>",
    "trailing chatter": "<think>...</think><answer>B</answer> Hope this helps!",
}
for name, text in responses.items():
    b = total_reward(text, choices)
    print(f"{name:18s} format={b.format_reward:.0f} accuracy={b.accuracy_reward:.1f} "
          f"total={b.total:.1f} ({b.match_kind})")

# %%
# Batch scoring reads one JSON object per line, so the same rules can be
# applied to a file of model outputs with ``grpolab reward FILE``.
