import numpy as np
import pytest

from planar_stlc.cli import resolve_model

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]}  {name}")


@pytest.fixture(scope="session")
def models():
    names = [
        "pendubot2",
        "acrobot2",
        "three_link_config1",
        "three_link_config2",
        "three_link_config3",
        "pendubot4",
        "pendubot5",
        "acrobot4",
        "acrobot5",
    ]
    return {n: resolve_model(n) for n in names}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
