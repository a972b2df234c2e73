import pytest

CRITERIA = []


@pytest.fixture
def verdict(request):
    """Record one criterion line (PASS/FAIL plus measured values) and assert it."""
    def _verdict(ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        print(line)
        CRITERIA.append(line)
        assert ok, detail
    return _verdict


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
