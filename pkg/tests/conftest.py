import sys

import pytest

from densetrack.geometry import BBox
from densetrack.synth import ObjectSpec, SynthConfig, generate_clip


def moving_clip(n=10, velocity=(2.0, 0.0), box=(10, 20, 30, 40), size=(128, 96), seed=7, **kw):
    obj = ObjectSpec(1, box, velocity, **kw)
    return generate_clip(SynthConfig(width=size[0], height=size[1], num_frames=n, objects=(obj,),
                                     keep_fraction=1.0, seed=seed))


@pytest.fixture
def linear_clip():
    return moving_clip()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("AC")[1].split()[0])):
        terminalreporter.write_line(line)
