import numpy as np
import pytest

from trajattack import generate_synthetic_scenarios, train_tiny_surrogate
from trajattack.core import Agent, LaneSegment, Scenario, Trajectory
from trajattack.predictors import TrainConfig

TRAIN_SEED = 1
SUITE_SEED = 7


@pytest.fixture(scope="session")
def suite():
    return generate_synthetic_scenarios(seed=SUITE_SEED)


@pytest.fixture(scope="session")
def train_set():
    return generate_synthetic_scenarios(seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def surrogate(train_set):
    return train_tiny_surrogate(train_set, TrainConfig(), seed=0).model


def straight_scenario(v=10.0, dt=0.5, history_len=4, future_len=12, context=1, heading=0.0,
                      origin=(0.0, 0.0), sid="straight"):
    """Single-lane straight road with a lead vehicle, adversary on the centreline."""
    n = context + history_len + future_len
    u = np.array([np.cos(heading), np.sin(heading)])
    o = np.asarray(origin, dtype=float)
    adv = o + np.outer(np.arange(n) * v * dt, u)
    lead = adv + 30.0 * u
    road = o + np.outer(np.linspace(-50.0, n * v * dt + 80.0, 200), u)
    return Scenario(
        agents=(Agent("adv", "car", Trajectory(adv, dt)), Agent("lead", "car", Trajectory(lead, dt))),
        adversary_id="adv", history_len=history_len, future_len=future_len,
        lanes=(LaneSegment(road, 3.6),), dt=dt, id=sid,
    )
