import math

import numpy as np
import pytest
from hypothesis import settings

from radarodom import simulator as sim
from radarodom.geometry import EulerAngles, PoseSE3

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_pose(rng: np.random.Generator, scale: float = 5.0) -> PoseSE3:
    e = EulerAngles(rng.uniform(-math.pi, math.pi), rng.uniform(-1.5, 1.5), rng.uniform(-math.pi, math.pi))
    return PoseSE3.from_euler(e, rng.uniform(-scale, scale, 3))


@pytest.fixture(scope="session")
def straight_sequence():
    """4 m straight line at 1 m/s, 20 Hz, default room."""
    spec = sim.TrajectorySpec(sim.waypoints_from_xyzyaw([(-1.5, -1.0, 1.2, 0.0), (2.5, -1.0, 1.2, 0.0)]))
    return sim.generate_sequence(sim.default_world(), spec, seed=3)


@pytest.fixture(scope="session")
def turning_sequence():
    spec = sim.TrajectorySpec(sim.waypoints_from_xyzyaw([(-1.0, 0.0, 1.2, 0.0), (0.0, 0.0, 1.2, 0.0),
                                                         (0.0, 0.0, 1.2, math.pi / 2), (0.0, 1.0, 1.2, math.pi / 2)]))
    return sim.generate_sequence(sim.default_world(), spec, seed=5)


@pytest.fixture(scope="session")
def toy_prepared(straight_sequence):
    from radarodom.neural.model import NetworkConfig
    from radarodom.neural.training import prepare_sequence
    return prepare_sequence(straight_sequence, NetworkConfig.toy())
