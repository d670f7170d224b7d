import os

import numpy as np
import pytest

from radardepth import synth

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criteria.setdefault(m.args[0], {"title": m.args[1], "outcomes": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key, val in report.user_properties:
        if key == "criterion" and val in _criteria:
            _criteria[val]["outcomes"].append(report.outcome)


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        request.node.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        c = _criteria[num]
        outs = c["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif all(o == "passed" for o in outs):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"AC{num:<2} {status:7} {c['title']}")


@pytest.fixture(scope="session")
def small_scene():
    return synth.generate(7, width=192, height=112, n_boxes=2, depth_range=(6.0, 25.0))


@pytest.fixture(scope="session")
def default_scene():
    return synth.generate(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cli_env():
    env = dict(os.environ)
    env.pop("RADARDEPTH_CONFIG", None)
    return env
