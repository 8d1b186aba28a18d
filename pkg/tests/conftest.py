import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record a one-line PASS/FAIL for an acceptance criterion, then assert it."""

    def check(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
