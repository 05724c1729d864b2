import re
from pathlib import Path

import pytest

from annotex.builders import build_linear_regression
from annotex.evidence import verify_bundle
from annotex.predict_cvd import build_predict

DATA = Path(__file__).resolve().parents[1] / "src" / "annotex" / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture
def b1():
    """y = 2*x1 + 3*x2 + 1 with its two-leaf bundle."""
    return build_linear_regression([2.0, 3.0], 1.0)


@pytest.fixture(scope="session")
def predict_models():
    return {sex: build_predict(sex) for sex in ("women", "men")}


@pytest.fixture(scope="session")
def predict_results(predict_models):
    return {sex: verify_bundle(g, b, seed=42) for sex, (g, b) in predict_models.items()}


# -- one summary line per acceptance criterion -------------------------------------------

_CRITERION = re.compile(r"test_criterion_(\d+)_([a-z0-9_]+)")
_criteria: dict[int, list] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None or "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        entry = _criteria.setdefault(int(m.group(1)), [m.group(2).replace("_", " "), True])
        entry[1] = entry[1] and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, (title, ok) in sorted(_criteria.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}")
