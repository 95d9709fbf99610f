"""Collects acceptance-criterion verdicts and repeats them in the terminal summary."""
import pytest

_VERDICTS: dict = {}


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[n] = line
        with capsys.disabled():
            print("\n" + line, flush=True)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
