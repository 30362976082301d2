import numpy as np
import pytest
from hypothesis import settings

from uwbscatter.channel import Anchor, Reflector, Scene, TagPlacement
from uwbscatter.sweep import plan_sweep
from uwbscatter.waveform import TagConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def pair_scene():
    """Two anchors 4 m apart, one reflector, one uncoded tag."""
    a = Anchor("A", (0.0, 0.0, 1.0))
    b = Anchor("B", (4.0, 0.0, 1.0))
    tag = TagPlacement(TagConfig(freq_offset_ppm=120.0, start_cycles=0.3), (2.0, 1.5, 1.0))
    return Scene((a, b), (Reflector((2.0, -2.0, 1.0)),), (tag,))


@pytest.fixture
def small_plan():
    return plan_sweep(n_bands=6, sub_bins=8, dwell=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    store = _CRITERIA.setdefault(crit, [])
    detail = dict(report.user_properties).get("detail", "")
    store.append((report.nodeid.split("::")[-1], report.passed, detail))


_CRITERIA: dict = {}


@pytest.fixture
def criterion(request, record_property):
    """Tag a test with its acceptance criterion; ``detail(text)`` adds a note."""
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])
    return lambda text: record_property("detail", text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        parts = _CRITERIA[n]
        ok = all(p for _, p, _ in parts)
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}")
        for name, passed, detail in parts:
            tr.write_line(f"    {'ok  ' if passed else 'FAIL'} {name}  {detail}")
