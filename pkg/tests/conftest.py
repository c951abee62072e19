import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(number, label, ok, detail)``.

    The line is printed immediately (visible with ``-s``) and again in the
    terminal summary, then the test asserts ``ok``.
    """

    def record(number, label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {label} | {detail}"
        _VERDICTS[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
