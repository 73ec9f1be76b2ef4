import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: acceptance(number, title, ok, detail)."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    def record(number, title, ok, detail=""):
        lines.append((number, f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
