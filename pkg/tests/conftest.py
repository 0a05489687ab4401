import numpy as np
import pytest

from tinytarget.geometry import BBox


def random_box(rng: np.random.Generator, extent: float = 64.0, max_size: float = 24.0) -> BBox:
    return BBox(
        float(rng.uniform(0, extent)),
        float(rng.uniform(0, extent)),
        float(rng.uniform(0.5, max_size)),
        float(rng.uniform(0.5, max_size)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20231015)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        _ACCEPTANCE[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]}  {name}")
