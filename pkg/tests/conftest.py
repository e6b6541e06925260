import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# per-criterion outcome lines for the acceptance run, printed after the
# normal pytest summary

_criterion_results: dict[int, tuple[str, float, str]] = {}
_CRITERION_RE = re.compile(r"test_c(\d+)_")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if getattr(item.module, "__name__", "") != "test_acceptance":
        return
    m = _CRITERION_RE.match(item.name)
    if m is None:
        return
    num = int(m.group(1))
    doc = (item.function.__doc__ or "").strip().splitlines()
    desc = doc[0] if doc else item.name
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
        _criterion_results[num] = (status, report.duration, desc)
    elif report.when == "setup" and (report.skipped or report.failed):
        status = "SKIP" if report.skipped else "FAIL"
        _criterion_results[num] = (status, report.duration, desc)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criterion_results):
        status, duration, desc = _criterion_results[num]
        terminalreporter.write_line(f"[C{num}] {status} {desc} ({duration:.1f}s)")
