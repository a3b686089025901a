import time
from pathlib import Path

import pytest

from topomia.harness import pipeline
from topomia.harness.config import load_config

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full default-config pipeline run shared by the harness and acceptance tests."""
    out = tmp_path_factory.mktemp("default_run")
    config = load_config(output_dir=str(out))
    start = time.perf_counter()
    bundle = pipeline.run_pipeline(config)
    elapsed = time.perf_counter() - start
    return config, bundle, Path(out), elapsed


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    number, title = marker
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["passed"] = False


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", tuple(marker.args)))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {entry['title']}")
