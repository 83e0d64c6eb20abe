import numpy as np
import pytest
from hypothesis import settings

from xmatch.core import CardFormat, Gender, PairedDataset

# wall-clock deadlines are noise on a shared CPU; example counts stay per test
settings.register_profile("xmatch")
settings.load_profile("xmatch")

ACCEPTANCE_LINES = []


def make_dataset(n, d=8, seed=0, prefix="s", doc=None, selfie=None, gender=None, card=None,
                 age_doc=10, age_selfie=18):
    """Small random dataset; pass ``doc``/``selfie`` to fix the features."""
    rng = np.random.default_rng(seed)
    if doc is None:
        doc = rng.standard_normal((n, d))
    if selfie is None:
        selfie = rng.standard_normal((n, d))
    if gender is None:
        gender = [Gender.MALE if i % 2 else Gender.FEMALE for i in range(n)]
    if card is None:
        card = [CardFormat.YELLOW if i % 3 == 0 else CardFormat.BLUE for i in range(n)]
    return PairedDataset([f"{prefix}{i:04d}" for i in range(n)], doc, selfie, gender,
                         np.full(n, age_doc), np.full(n, age_selfie), card)


@pytest.fixture
def small_dataset():
    return make_dataset(24, d=6, seed=1)


def record_acceptance(line):
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
