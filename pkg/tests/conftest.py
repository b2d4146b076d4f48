import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.fixture
def evidence(request):
    """Collects measured values that are echoed on the criterion's summary line."""
    notes: list[str] = []
    marker = request.node.get_closest_marker("criterion")
    if marker:
        _CRITERIA.setdefault(marker.args[0], {"title": marker.args[1], "ok": True, "notes": []})["notes"] = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call" or (marker and report.failed):
        entry = _CRITERIA.setdefault(marker.args[0], {"title": marker.args[1], "ok": True, "notes": []})
        entry["ok"] = entry["ok"] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["notes"])
        terminalreporter.write_line(f"[{status}] {number}. {entry['title']}" + (f" ({detail})" if detail else ""))
