import pytest
from hypothesis import settings

# fixed example generation so reruns are identical
settings.register_profile("repro", derandomize=True, database=None, print_blob=True)
settings.load_profile("repro")

_ACCEPTANCE = {}


@pytest.fixture
def record():
    """record(n, ok, detail): store one acceptance line for the terminal summary."""
    def _record(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
