import pytest

from grpolab.dataset import VqaRecord
from grpolab.reward import ChoiceSet

SHOULDER_OPTIONS = ("Cartilage degeneration", "Labral pathology", "Bone fracture", "Tendonitis")
SHOULDER_RESPONSE = (
    "<think>\n"
    "The image is a grayscale MRI image of an upper arm joint. \n"
    "The bicondylar humeral head of the humerus is visible. There is a well-defined ...\n"
    "</think>\n"
    "\n"
    "<answer>B, there is no clear indication of ... </answer>"
)
CHEST_OPTIONS = ("Lungs", "Bladder", "Brain", "Heart")
CHEST_RESPONSE = (
    "<think>\n"
    "The image is a chest X-ray, which is a type of radiographic image used to visualize the "
    "internal structures of the body, particularly the lungs and bones. The presence of lung "
    "markings and the ribcage are characteristic features of a chest X-ray.\n"
    "</think>\n"
    "<answer>A</answer>"
)


@pytest.fixture
def shoulder_choices():
    return ChoiceSet(SHOULDER_OPTIONS, "B")


@pytest.fixture
def shoulder_record():
    return VqaRecord(
        id="shoulder",
        question="What can be observed in this image?",
        options=SHOULDER_OPTIONS,
        gt_letter="B",
        modality="MRI",
        image_ref="images/shoulder.png",
    )


@pytest.fixture
def chest_choices():
    return ChoiceSet(CHEST_OPTIONS, "A")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
