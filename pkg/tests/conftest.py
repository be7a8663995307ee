import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kscrit.profiles import Parameters  # noqa: E402
from kscrit.stationary import critical_constants  # noqa: E402


@pytest.fixture(scope="session")
def P3():
    return Parameters(3)


@pytest.fixture(scope="session")
def cc3():
    return critical_constants(3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
