import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> [title, passed, notes]
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    entry = ACCEPTANCE.setdefault(number, [title, True, []])
    entry[1] = entry[1] and rep.passed
    entry[2] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, notes = ACCEPTANCE[number]
        line = f"{'PASS' if passed else 'FAIL'} {number}. {title}"
        if notes:
            line += "  [" + ", ".join(dict.fromkeys(notes)) + "]"
        terminalreporter.write_line(line)
