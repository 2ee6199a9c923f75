import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    _, passed, notes = _CRITERIA.get(number, (title, True, []))
    if report.failed or (report.when == "call" and report.skipped):
        passed = False
    if report.when == "call":
        notes = notes + [f"{k}={v}" for k, v in item.user_properties]
    _CRITERIA[number] = (title, passed, notes)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, notes = _CRITERIA[number]
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}"
        if notes:
            line += "  [" + ", ".join(notes) + "]"
        terminalreporter.write_line(line)
