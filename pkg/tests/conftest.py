import sys
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(DATA))


@pytest.fixture(scope="session")
def oracle_table():
    import oracle

    return oracle.load()


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(name, passed, detail)."""

    def record(name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        if passed is None:
            status = "REPORT"
        line = f"[{status}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
