import numpy as np
import pytest

from app.config import get_settings
from app.controllers import FridayState
from app.dataset import ReplayDataset
from app.linalg import solve_care
from app.mlp import init_network
from app.plant import LtiModel
from app.schemas import ExperimentConfig, TrainingHyper

CAR_MASS = 1.5
CAR_Q = np.diag([20.0, 5.0])
CAR_R = np.array([[1.0]])


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def car():
    """Nominal double integrator m * pddot = u with m = 1.5 kg"""
    return LtiModel.car(CAR_MASS)


@pytest.fixture
def car_care(car):
    """LQR solution for Q = diag(20, 5), R = 1"""
    return solve_care(car.a, car.b, CAR_Q, CAR_R)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    """3 -> 8 -> 8 -> 1 network"""
    return init_network([3, 8, 8, 1], seed=0)


@pytest.fixture
def zero_net():
    net = init_network([3, 8, 8, 1], seed=0)
    for w in net.weights:
        w[...] = 0.0
    return net


@pytest.fixture
def friday_state(car_care, small_net):
    """FRIDAY state around the car plant with a small network"""

    def make(net=None, sn_enabled=True, batch_size=4):
        return FridayState(
            gain_k=car_care.gain_k,
            net=net if net is not None else small_net,
            dataset=ReplayDataset(),
            hyper=TrainingHyper(learning_rate=1e-3, momentum=0.9, batch_size=batch_size),
            rng=np.random.default_rng(7),
            sn_enabled=sn_enabled,
        )

    return make


@pytest.fixture
def tiny_config():
    """Short sine-tracking experiment with a small network, two seeds"""
    return ExperimentConfig.model_validate(
        {
            "name": "tiny",
            "truth": {"kind": "enviro"},
            "controller": {"kind": "friday"},
            "reference": {"kind": "sine"},
            "simulation": {"duration": 2.0, "control_rate": 20.0, "sim_substep": 0.005},
            "network": {"hidden_layers": [8, 8]},
            "training": {"batch_size": 8},
            "seeds": [0, 1],
        }
    )
