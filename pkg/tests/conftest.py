import numpy as np
import pytest

import destimate as d
from destimate.demo import demo_scenario


@pytest.fixture(scope="session")
def demo_dict():
    return demo_scenario()


@pytest.fixture(scope="session")
def demo(demo_dict):
    return d.parse_scenario(demo_dict)


@pytest.fixture(scope="session")
def demo_design(demo):
    """Synthesized estimator + report for the bundled demo scenario."""
    est, report = d.synth_distributed(demo.plant, demo.graph)
    return est, report


@pytest.fixture(scope="session")
def demo_stacked(demo):
    C = np.vstack([s.C for s in demo.plant.sensors])
    D = np.vstack([s.D for s in demo.plant.sensors])
    return C, D
