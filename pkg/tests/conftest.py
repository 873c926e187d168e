import numpy as np
import pytest

from sessrank.corpus import GenConfig, generate_corpus
from sessrank.session import BAIDU, ActionEvent, SessionRecord


def make_session(kinds, shown=("L1", "L2", "L3"), engine=BAIDU, user="u1", sid="s1", t0=1000):
    """Build a session from a compact string list: "S" search, "E" edit, "C:<link>" click."""
    events = []
    for i, k in enumerate(kinds):
        t = t0 + 10 * i
        if k == "S":
            events.append(ActionEvent.search(t, f"q{i}"))
        elif k == "E":
            events.append(ActionEvent.edit(t, f"q{i} more"))
        else:
            events.append(ActionEvent.click(t, k.split(":", 1)[1]))
    return SessionRecord(sid, user, engine, tuple(events), tuple(shown))


@pytest.fixture(scope="session")
def default_corpus():
    return generate_corpus(GenConfig())


@pytest.fixture(scope="session")
def small_cfg():
    return GenConfig(
        quotas={BAIDU: (6, 5, 5, 4)},
        catalog_size=60,
        user_count=12,
        publisher_count=6,
    )


@pytest.fixture(scope="session")
def small_corpus(small_cfg):
    return generate_corpus(small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria append "PASS name" / "FAIL name" lines here; they are
# printed as their own section at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
