import sys

import numpy as np
import pytest

import brc


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None) if acceptance else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def diag_problem():
    return brc.build_diag()


@pytest.fixture(scope="session")
def neutral_agent(diag_problem):
    setting, _, params = diag_problem
    return brc.solve(setting, params, resolution=100)


@pytest.fixture(scope="session")
def neutral_agent_coarse(diag_problem):
    setting, _, params = diag_problem
    return brc.solve(setting, params, resolution=30)


@pytest.fixture(scope="session")
def small_dataset(diag_problem, neutral_agent):
    _, truth, _ = diag_problem
    return brc.generate_dataset(neutral_agent, truth, n=60, master_seed=20240601)


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
