import numpy as np
import pytest

from pessirelax.problem import Registry


@pytest.fixture(scope="session")
def registry():
    return Registry(use_env=False)


@pytest.fixture(scope="session")
def toy(registry):
    return registry["ex_toy"]


@pytest.fixture(scope="session")
def linear(registry):
    return registry["ex_linear"]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one PASS/FAIL line per acceptance criterion, printed in the terminal summary
_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed:
        num = int(name.split("_")[2])
        detail = dict(report.user_properties).get("detail", "")
        prev = _CRITERIA.get(num, ("PASS", ""))
        verdict = "FAIL" if report.failed or prev[0] == "FAIL" else "PASS"
        _CRITERIA[num] = (verdict, detail or prev[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_CRITERIA):
        verdict, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
