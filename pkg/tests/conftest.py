import pytest

from ctxfuse.profile_io import load_profile, profile_from_dict
from ctxfuse.types import BranchSpec, SensorSpec, SystemProfile


@pytest.fixture(scope="session")
def default_profile():
    return load_profile("default")


@pytest.fixture(scope="session")
def table1_profile():
    return load_profile("radiate-table1")


def small_profile(**kw) -> SystemProfile:
    """Two cameras and a radar, three single-sensor branches plus one early-fusion branch."""
    sensors = [
        SensorSpec("cl", "camera", 1.9),
        SensorSpec("cr", "camera", 1.9),
        SensorSpec("r", "radar", 21.6, 2.4, 4.0, True),
    ]
    branches = [
        BranchSpec("cl", {"cl"}, 0.01, 10.0, {"default": 0.5}),
        BranchSpec("cr", {"cr"}, 0.01, 10.0, {"default": 0.6}),
        BranchSpec("r", {"r"}, 0.02, 5.0, {"default": 0.4, "fog": 0.2}),
        BranchSpec("ecam", {"cl", "cr"}, 0.015, 12.0, {"default": 0.3}),
    ]
    return SystemProfile(sensors, branches, **kw)


def zero_degradation_doc(base: dict) -> dict:
    doc = dict(base)
    zero = {"box_noise_sigma": 0.0, "miss_prob": 0.0, "false_pos_rate": 0.0, "conf_scale": 1.0}
    doc["degradation"] = {"policy": "best", "default": zero, "modalities": {}, "branches": {}}
    return doc


@pytest.fixture
def zero_profile():
    import json

    from ctxfuse.profile_io import bundled_path

    doc = json.loads(bundled_path("default").read_text())
    return profile_from_dict(zero_degradation_doc(doc))


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
