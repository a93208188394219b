import re

import pytest

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_results: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = _CRITERION.search(item.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if rep.when == "call" or rep.failed or rep.skipped:
        prev = _results.get(n)
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        if prev != "FAIL":
            _results[n] = status


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    doc = {}
    try:
        import test_acceptance
        doc = test_acceptance.CRITERIA
    except ImportError:
        pass
    for n in sorted(_results):
        terminalreporter.write_line(f"criterion {n:2d}: {_results[n]}  {doc.get(n, '')}")
