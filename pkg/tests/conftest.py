import re

_CRITERION = re.compile(r"test_criterion_(\d+)")
_results: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    detail = dict(report.user_properties).get("detail", "")
    state = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _results[int(match.group(1))] = (state, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        state, detail = _results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {state}  {detail}".rstrip())
