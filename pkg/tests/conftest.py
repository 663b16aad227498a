import pytest

import config
from models.network import AffineCost, DemandTable, Network, Route
from models.training import TrainerConfig
from services.network_core import load_network


def _bundled(name):
    return load_network(*config.bundled_files(name))


@pytest.fixture
def braess():
    return _bundled("braess")


@pytest.fixture
def braess4():
    return _bundled("braess4")


@pytest.fixture
def ow():
    return _bundled("ow")


@pytest.fixture
def braess_routes(braess):
    """ACB, ADB, ACDB as link-id routes."""
    od = ("A", "B")
    return {od: [Route(od=od, links=(0, 1)), Route(od=od, links=(2, 3)), Route(od=od, links=(0, 4, 3))]}


@pytest.fixture
def one_link():
    net = Network(
        name="one-link",
        nodes=["O", "D"],
        links=[{"id": 0, "tail": "O", "head": "D", "cost_fn": AffineCost(a=5.0, b=2.0)}],
    )
    demand = DemandTable(entries=[{"origin": "O", "destination": "D", "demand": 4}])
    return net, demand


@pytest.fixture
def small_trainer():
    return TrainerConfig(
        episodes=50,
        batch_size=8,
        buffer_capacity=500,
        warmup=16,
        target_sync=20,
        hidden_sizes=[16, 8],
        k_max=4,
        learning_rate=1e-3,
        log_every=10,
    )
