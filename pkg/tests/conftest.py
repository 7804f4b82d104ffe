import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs longer than a few seconds")
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
