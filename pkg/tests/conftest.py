import os

import pytest

from hoirefine.config import load_config
from hoirefine.ingest import load_ground_truth, load_predictions, load_vocabulary

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def fixture_vocab():
    return load_vocabulary(fixture_path("vocab.txt"))


@pytest.fixture(scope="session")
def fixture_predictions(fixture_vocab):
    return load_predictions(fixture_path("predictions.jsonl"), fixture_vocab)


@pytest.fixture(scope="session")
def fixture_gt(fixture_predictions):
    return load_ground_truth(fixture_path("gt.jsonl"), fixture_predictions)


@pytest.fixture(scope="session")
def fixture_config():
    return load_config(fixture_path("config.json"))


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line("  " + line)
