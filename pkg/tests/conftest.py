import pytest

_LINES: list = []


@pytest.fixture
def verdict():
    """Record one ``PASS``/``FAIL`` line for the acceptance summary, then assert."""
    def record(label: str, ok: bool, detail: str):
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, f"{label}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
