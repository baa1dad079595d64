import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a pass/fail line and asserts ``ok``."""
    lines = request.config.stash[_LINES]

    def record(n, ok, detail):
        lines.setdefault(n, []).append((bool(ok), detail))
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        ok = all(o for o, _ in lines[n])
        detail = "; ".join(d for _, d in lines[n])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
