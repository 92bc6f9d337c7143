"""Prints one pass/fail line per acceptance criterion after the run.

Acceptance tests carry ``@pytest.mark.criterion(n, "title")``; any extra
detail they attach with ``record_property("detail", ...)`` is shown next to
the verdict.
"""

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n, title = mark.args
            _results.setdefault(n, {"title": title, "outcomes": [], "details": []})
            item.user_properties.append(("criterion", n))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    n = props.get("criterion")
    if n is None or n not in _results:
        return
    entry = _results[n]
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)
    if report.when == "call":
        entry["details"].extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_results):
        entry = _results[n]
        outcomes = entry["outcomes"]
        if not outcomes:
            verdict = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            verdict = "PASS"
        elif any(o == "failed" for o in outcomes):
            verdict = "FAIL"
        else:
            verdict = "SKIP"
        line = f"criterion {n}: {verdict}  {entry['title']}"
        if entry["details"]:
            line += "  [" + "; ".join(entry["details"]) + "]"
        tr.write_line(line)
