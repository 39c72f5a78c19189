import sys

import pytest

from fso_outage.ppm import MonteCarloSpec, get_table

TABLE_MC = MonteCarloSpec(10**6, 0)


@pytest.fixture(scope="session")
def table2():
    return get_table(2, TABLE_MC)


@pytest.fixture(scope="session")
def table4():
    return get_table(4, TABLE_MC)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
