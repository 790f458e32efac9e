import pytest

from beliefshift.backends import ScriptedBackend, deviation_world
from beliefshift.pipeline import FrameManifest, plan_segments


def make_deviation_case(duration=20.0, fps=5, k=8, deviation=4, **world_kw):
    manifest = FrameManifest.synthetic("clip", duration, fps)
    segments = plan_segments(manifest, k)
    world = deviation_world([s.observed_timestep for s in segments], deviation, **world_kw)
    return manifest, segments, world


@pytest.fixture
def deviation_case():
    return make_deviation_case()


@pytest.fixture
def scripted(deviation_case):
    manifest, segments, world = deviation_case
    return manifest, segments, ScriptedBackend(world)


def pytest_terminal_summary(terminalreporter):
    try:
        from tests.test_acceptance import summary_lines
    except ImportError:
        return
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
