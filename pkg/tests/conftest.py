"""Acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def _entry(item):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return None
    number, title = mark.args
    return _RESULTS.setdefault(number, {"title": title, "outcomes": [], "details": []})


@pytest.fixture
def detail(request):
    """Append a measured-value line to this criterion's summary."""
    entry = _entry(request.node)

    def add(line: str) -> None:
        if entry is not None:
            entry["details"].append(line)
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _entry(item)
    if entry is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcomes"].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        ok = bool(entry["outcomes"]) and all(entry["outcomes"])
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {entry['title']}")
        for line in entry["details"]:
            tr.write_line(f"    {line}")
