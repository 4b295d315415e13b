import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



# ---------------------------------------------------------------- acceptance report

_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []
    config.addinivalue_line("markers", "criterion(number, title): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    rep = outcome.get_result()
    detail = dict(item.user_properties).get("detail", "")
    item.config.stash[_REPORT].append((mark.args[0], mark.args[1], rep.passed, call.duration, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(config.stash.get(_REPORT, []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, secs, detail in rows:
        line = f"C{n:<2} {'PASS' if ok else 'FAIL'}  {title} ({secs:.1f} s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
