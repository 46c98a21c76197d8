from pathlib import Path

import pytest

from slopehom import WeightMeasure, simulate_w_sample

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def small_table():
    """Cheap table for decision plumbing; not for quantile accuracy."""
    return simulate_w_sample(WeightMeasure.default(), n_paths=1 << 14, n_steps=256, seed=7)


@pytest.fixture(scope="session")
def default_table():
    return simulate_w_sample(WeightMeasure.default(), seed=0)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
