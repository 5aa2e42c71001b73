import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gfzip import _backend  # noqa: E402


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run a test once per available kernel backend."""
    with _backend.use_backend(request.param):
        yield request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
