import pytest
from hypothesis import settings

settings.register_profile("plaplab", deadline=None, max_examples=50)
settings.load_profile("plaplab")

_CRITERIA = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(cid: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
