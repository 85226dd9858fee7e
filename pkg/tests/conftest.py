import sys
from pathlib import Path

import pytest

# shared oracles live next to the tests
sys.path.insert(0, str(Path(__file__).resolve().parent))

_VERDICTS: dict[int, str] = {}


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
