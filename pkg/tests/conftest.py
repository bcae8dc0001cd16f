"""Shared fixtures: the gearset domain, plans, and scripted runtimes."""

import sys

import pytest

from btcell import fixtures, planner, world


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance criterion lines after capture ends."""
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(module, "CRITERION_LINES", [])
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in lines:
                    terminalreporter.write_line(line)
            break


@pytest.fixture(scope="session")
def domain():
    return world.default_domain()


@pytest.fixture(scope="session")
def rule_backend(domain):
    return planner.RuleBackend(domain)


@pytest.fixture(scope="session")
def gearset_plan(domain, rule_backend):
    """Approved 5-stage plan over the gearset fixture."""
    return planner.generate_plan(
        fixtures.gearset_transcript(5),
        fixtures.gearset_setup(),
        rule_backend,
        domain=domain,
    )


@pytest.fixture()
def initial_state(domain):
    return world.init_state(fixtures.gearset_setup(), domain)
