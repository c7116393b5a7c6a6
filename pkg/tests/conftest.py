import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hardballs.experiments import generate_state  # noqa: E402
from hardballs.flow import simulate  # noqa: E402
from hardballs.phase_space import SystemParams  # noqa: E402

FIXTURE_SEED = 2024


@pytest.fixture(scope="session")
def fixture_params():
    """Three unit-mass disks of radius 0.1 on the 2-torus."""
    return SystemParams.uniform(3, 2, 0.1)


@pytest.fixture(scope="session")
def fixture_state(fixture_params):
    return generate_state(fixture_params, FIXTURE_SEED)


@pytest.fixture(scope="session")
def fixture_segment(fixture_params, fixture_state):
    return simulate(fixture_state, fixture_params, n_collisions=1000)
