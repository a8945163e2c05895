import numpy as np
import pytest

from lobpredict.harness.synth import SynthSpec, synth_generate
from lobpredict.ingest import MessageRecord, SnapshotRecord, clean_session

NS = 1_000_000_000


def msg(t: float, etype: int = 1, oid: int = 1, size: int = 100, price: int = 1_000_000, direction: int = 1):
    return MessageRecord(int(round(t * NS)), etype, oid, size, price, direction)


def snap(asks, bids, levels: int = 10):
    return SnapshotRecord(levels, tuple(asks), tuple(bids))


@pytest.fixture(scope="session")
def synth_session():
    """One moderately sized synthetic session: (messages, snapshots)."""
    return synth_generate(SynthSpec(event_rate=0.5, seed=11))


@pytest.fixture(scope="session")
def clean_synth(synth_session):
    m, s = synth_session
    return clean_session(m, s, date="2019-01-07")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
