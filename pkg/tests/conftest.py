import pytest

_VERDICTS = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then fail the test if the criterion is not met."""

    def check(number: int, title: str, ok: bool, detail: str) -> None:
        _VERDICTS.append((number, title, bool(ok), detail))
        assert ok, f"criterion {number} ({title}) not met: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
