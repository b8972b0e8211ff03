"""Shared fixtures plus the acceptance-summary terminal hook."""

import pytest

from tdmfcc import synth

# one line per acceptance criterion, printed after the test summary so the
# verdicts stay visible in plain `pytest -v` output
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """48 clips: 4 digits x 3 speakers x 4 repetitions, 8 kHz WAVs."""
    root = tmp_path_factory.mktemp("corpus")
    synth.synth_corpus(root, n_reps=4, speakers=synth.SPEAKERS[:3],
                       digits=range(4))
    return root
