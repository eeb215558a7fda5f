import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion_line(capsys):
    """Record one PASS/FAIL line per acceptance criterion and echo it immediately."""

    def emit(number: int, passed: bool, text: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {text}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
