import pytest

_LINES: dict[int, str] = {}


class Criterion:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title

    def check(self, ok: bool, detail: str) -> None:
        line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}: {detail}"
        _LINES[self.number] = line
        print(line)
        assert ok, line


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_LINES):
        terminalreporter.write_line(_LINES[n])
