import numpy as np
import pytest

from seatrack import synth
from seatrack.tensor import Rng

# filled by test_acceptance; printed once at the end of the run
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small5_records():
    return synth.generate(synth.scenario("small5"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {line}")
