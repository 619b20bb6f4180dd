from collections import OrderedDict

import numpy as np
import pytest

from vussynth.toy import toy_car_model, toy_intrinsics, toy_pose, write_toy_scene

_criteria = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            n, title = m.args
            _criteria.setdefault(n, {"title": title, "tests": {}, "measured": []})
            _criteria[n]["tests"][item.nodeid] = None


def pytest_runtest_logreport(report):
    for entry in _criteria.values():
        if report.nodeid not in entry["tests"]:
            continue
        if report.when == "call":
            entry["measured"] += [f"{k}={v}" for k, v in report.user_properties]
        if report.failed:
            entry["tests"][report.nodeid] = "FAIL"
        elif report.when == "call" and entry["tests"][report.nodeid] is None:
            entry["tests"][report.nodeid] = "SKIP" if report.skipped else "PASS"
        elif report.skipped and entry["tests"][report.nodeid] is None:
            entry["tests"][report.nodeid] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        states = list(entry["tests"].values())
        if any(s == "FAIL" for s in states):
            verdict = "FAIL"
        elif states and all(s == "PASS" for s in states):
            verdict = "PASS"
        else:
            verdict = "INCOMPLETE"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {entry['title']} "
                                    f"({states.count('PASS')}/{len(states)} checks)")
        for m in entry["measured"]:
            terminalreporter.write_line(f"    {m}")


@pytest.fixture(scope="session")
def toy_model():
    return toy_car_model()


@pytest.fixture(scope="session")
def toy_camera():
    return toy_pose(), toy_intrinsics()


@pytest.fixture(scope="session")
def toy_scene(tmp_path_factory):
    """Directory with the toy car assets, a painted photo, instance list and config."""
    root = tmp_path_factory.mktemp("toy")
    cfg = write_toy_scene(root)
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
