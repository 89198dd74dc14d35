import numpy as np
import pytest

from mlp01.data import synth_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs2d():
    return synth_blobs(100, 2, 10.0, 0)


@pytest.fixture(scope="session")
def blobs8():
    return synth_blobs(60, 8, 6.0, 5)


# --- acceptance verdicts ------------------------------------------------------
# Tests marked `criterion(n)` record one PASS/FAIL line each; the lines are
# printed together at the end of the session.

VERDICTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def verdict(request):
    n = request.node.get_closest_marker("criterion").args[0]

    def record(ok, detail):
        VERDICTS[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and rep.when in ("setup", "call") and rep.failed and mark.args[0] not in VERDICTS:
        msg = str(call.excinfo.value).strip().splitlines()[0] if call.excinfo else "failed"
        VERDICTS[mark.args[0]] = (False, msg)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
