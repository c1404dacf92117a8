import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def proxy_data():
    from superdp import data

    tr, tl, va, vl = data.digits_proxy()
    return data.from_raw(tr, tl), data.from_raw(va, vl)


@pytest.fixture(scope="session")
def small_data(proxy_data):
    from superdp import data

    train, val = proxy_data
    return data.subset(train, 400, 0), data.subset(val, 100, 1)


@pytest.fixture(scope="session")
def proxy_dir(tmp_path_factory):
    from superdp import data

    out = tmp_path_factory.mktemp("proxy")
    data.write_proxy_files(str(out))
    return out


# --- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n, title)`` are folded into one PASS/FAIL line per
# criterion at the end of the session; ``supporting(title)`` tests get their
# own SUPPORT lines.

_criteria = {}
_supporting = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config.addinivalue_line("markers", "supporting(title): supporting evidence reported next to the criteria")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "teardown" and rep.passed:
        return
    if rep.when == "call" or rep.failed:
        for name, table in (("criterion", _criteria), ("supporting", _supporting)):
            mark = item.get_closest_marker(name)
            if mark is None:
                continue
            key = mark.args[0]
            title = mark.args[-1]
            status, detail = table.get(key, ("PASS", title))[0], title
            if rep.failed:
                status = "FAIL"
            elif rep.skipped and status == "PASS":
                status = "SKIP"
            table[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not (_criteria or _supporting):
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        status, title = _criteria[key]
        terminalreporter.write_line(f"CRITERION {key}: {status}  {title}")
    for key in sorted(_supporting):
        status, title = _supporting[key]
        terminalreporter.write_line(f"SUPPORT {key}: {status}")
