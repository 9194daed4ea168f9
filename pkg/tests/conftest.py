"""Per-criterion pass/fail summary for tests marked ``@pytest.mark.criterion(n, title)``.

A criterion passes only when every test carrying its marker passed.  Tests may
attach a short detail string with ``record_property("detail", ...)``.
"""
import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when != "call" and not (report.failed or report.skipped):
        return
    n, title = marker.args
    entry = _outcomes.setdefault(n, {"title": title, "status": [], "detail": []})
    entry["status"].append("skipped" if report.skipped else ("passed" if report.passed else "failed"))
    if report.when == "call":
        entry["detail"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        e = _outcomes[n]
        if "failed" in e["status"]:
            verdict = "FAIL"
        elif "skipped" in e["status"]:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = "; ".join(e["detail"])
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {e['title']}" + (f"  [{detail}]" if detail else ""))
