import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


class AcceptanceRecorder:
    def __init__(self, lines):
        self._lines = lines

    def record(self, number: int, name: str, passed: bool, detail: str) -> bool:
        status = "PASS" if passed else "FAIL"
        self._lines.append((number, f"[{status}] criterion {number:>2} {name}: {detail}"))
        return passed


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    return AcceptanceRecorder(request.config.stash[_ACCEPTANCE_KEY])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
