import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="long test; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_a"):
        return
    key = name[len("test_"):].split("_", 1)[0].upper()
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        state = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _CRITERIA[key] = (state, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k[1:])):
        state, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{key} {state}" + (f"  {detail}" if detail else ""))
