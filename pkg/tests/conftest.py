import pytest

_RESULTS = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str = ""):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        _RESULTS[criterion] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_RESULTS, key=lambda k: (int(k.rstrip("abcd")), k)):
            terminalreporter.write_line(_RESULTS[key])
