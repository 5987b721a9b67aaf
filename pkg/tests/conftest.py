import pytest

from diffmpc.config import default_accelerator_config, default_oscillator_config
from diffmpc.loop import run_closed_loop


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def accelerator_run():
    return run_closed_loop(default_accelerator_config())


@pytest.fixture(scope="session")
def oscillator_run():
    return run_closed_loop(default_oscillator_config())
