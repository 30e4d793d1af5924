import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, outcome); filled by tests marked ``acceptance``
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    # tests may attach measured values with record_property("measured", ...)
    measured = dict(item.user_properties).get("measured")
    if measured:
        title = f"{title}  [{measured}]"
    if rep.failed:
        ACCEPTANCE[number] = (title, "FAIL")
    elif rep.when == "call" and number not in ACCEPTANCE:
        ACCEPTANCE[number] = (title, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, status = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
