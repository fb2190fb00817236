import os

import pytest

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


ACCEPTANCE = pytest.StashKey()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(ACCEPTANCE, {})
    if rows:
        terminalreporter.section("acceptance criteria")
        for num in sorted(rows):
            terminalreporter.write_line(rows[num])
