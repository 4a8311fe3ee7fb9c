import pytest

_RESULTS: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def report(ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}"
        _RESULTS.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
