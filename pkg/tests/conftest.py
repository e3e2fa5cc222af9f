import pytest

from goalchain.demo import RRTConfig, rrt_plan
from goalchain.dubins import EnvConfig, default_start, serpentine_maze


@pytest.fixture(scope="session")
def default_demo():
    """One RRT demonstration through the default serpentine maze."""
    return rrt_plan(serpentine_maze(), EnvConfig(), default_start(), RRTConfig(seed=1))
