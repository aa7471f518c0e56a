from __future__ import annotations

import copy
import sys

import pytest

from cloudmesh.bench import workloads


@pytest.fixture
def three_clouds() -> dict:
    return copy.deepcopy(workloads.bundled_scenario("three_clouds"))


@pytest.fixture
def migration_doc() -> dict:
    return copy.deepcopy(workloads.bundled_scenario("migration_demo"))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
