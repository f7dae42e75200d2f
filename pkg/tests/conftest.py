import pytest

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records an acceptance outcome and asserts it."""

    def record(n, ok, detail):
        ok = bool(ok)
        prev = _ACCEPTANCE.get(n)
        _ACCEPTANCE[n] = (ok, detail) if prev is None else (ok and prev[0], f"{prev[1]}; {detail}")
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
