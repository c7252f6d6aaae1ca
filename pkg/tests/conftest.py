from __future__ import annotations

import time

import pytest

from seriescomp.calibrate import calibrate
from seriescomp.fixtures import case_spec, gcm_network
from seriescomp.scenario import run

# (number, title) -> list of outcomes of the tests tagged with it
_CRITERIA: dict[tuple[int, str], list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.setdefault(key, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), results in sorted(_CRITERIA.items()):
        verdict = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}")


@pytest.fixture(scope="session")
def calibration():
    return calibrate(confirm=False)


@pytest.fixture(scope="session")
def gcm_net(calibration):
    assert calibration.feasible, calibration.messages
    return gcm_network(calibration.angle_spread_rad, calibration.params)


class CaseRuns:
    """Runs each named scenario once per session and remembers its wall time."""

    def __init__(self, net):
        self.net = net
        self.results = {}
        self.wall = {}
        self.specs = {}

    def spec(self, name: str):
        case, kw = _CASES[name]
        return case_spec(case, self.net, **kw)

    def get(self, name: str):
        if name not in self.results:
            spec = self.specs[name] = self.spec(name)
            t0 = time.perf_counter()
            self.results[name] = run(spec)
            self.wall[name] = time.perf_counter() - t0
        return self.results[name]


# acceptance scenarios on the calibrated fixture
_CASES = {
    "case1": (1, {}),
    "case2": (2, {"t_end_s": 5.0}),
    "case3": (3, {}),
    "case3_scaled": (3, {"modeled_sm_tc": 5}),
    "case3_hil": (3, {"hil_line": "SM_TC"}),
}


@pytest.fixture(scope="session")
def case_runs(gcm_net):
    return CaseRuns(gcm_net)
