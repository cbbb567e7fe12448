from pathlib import Path

import pytest

from roadmcl.distance_field import build_distance_field, field_bounds
from roadmcl.map_model import load_osm

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def grid_map():
    return load_osm(FIXTURES / "grid4.osm")


@pytest.fixture(scope="session")
def ring_map():
    return load_osm(FIXTURES / "ring.osm")


@pytest.fixture(scope="session")
def rural_map():
    return load_osm(FIXTURES / "rural.osm")


@pytest.fixture(scope="session")
def grid_field(grid_map):
    return build_distance_field(grid_map, field_bounds(grid_map, 50.0))


@pytest.fixture(scope="session")
def rural_field(rural_map):
    return build_distance_field(rural_map, field_bounds(rural_map, 100.0))


_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    if report.when == "call" or report.failed:
        entry["ok"] = entry["ok"] and report.passed
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        line = f"criterion {number} {'PASS' if entry['ok'] else 'FAIL'}: {entry['title']}"
        details = list(dict.fromkeys(entry["details"]))
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)
