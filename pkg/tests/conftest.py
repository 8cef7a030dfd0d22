import logging

import pytest

from termincome.hjb import extract_feedback, solve_hjb
from termincome.model import MarketParams

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def paper_params():
    return MarketParams()


@pytest.fixture(scope="session")
def tame_params():
    """Mild market where Monte Carlo moments are light tailed."""
    return MarketParams(r=0.05, sigma=0.2, lam=0.3, delta=0.2, eta=0.1, a=0.2, p=0.5)


@pytest.fixture(scope="session")
def paper_solution(paper_params):
    return solve_hjb(paper_params)


@pytest.fixture(scope="session")
def paper_policy(paper_solution):
    return extract_feedback(paper_solution)


@pytest.fixture(autouse=True)
def _quiet_boundary_warning(caplog):
    caplog.set_level(logging.ERROR, logger="termincome")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
