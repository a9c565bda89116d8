import sys

import pytest

from ferrosram.cellbench import CellConfig, programmed_state


@pytest.fixture(scope="session")
def nv_config():
    return CellConfig.from_config(topology="nvsram")


@pytest.fixture(scope="session")
def base_config():
    return CellConfig.from_config(topology="baseline")


@pytest.fixture(scope="session")
def nv_states(nv_config):
    return {b: programmed_state(nv_config, b) for b in (0, 1)}


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
