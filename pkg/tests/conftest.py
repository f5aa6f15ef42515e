import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Append one ``PASS``/``FAIL`` line per acceptance criterion to the end-of-run summary."""

    def record(number: int, name: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}")
        print(_ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)
