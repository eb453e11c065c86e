import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    passed = rep.passed and _results.get(number, (True,))[0]
    _results[number] = (passed, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        passed, title, detail = _results[number]
        line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
