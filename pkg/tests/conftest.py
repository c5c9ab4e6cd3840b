import pytest

from nash_unicast.mechanism import MechanismParams, assign_subsidies
from nash_unicast.network import build_network
from nash_unicast.utilities import log_utility


@pytest.fixture
def golden_net():
    # Two users contending on one unit link, plus a bystander who can receive
    # the pair link's subsidy.
    return build_network({"A": 1.0, "B": 2.0}, {"u1": ["A"], "u2": ["A"], "u3": ["B"]})


@pytest.fixture
def golden_utilities():
    return {0: log_utility(1.0), 1: log_utility(1.0), 2: log_utility(1.0)}


@pytest.fixture
def golden_params(golden_net, golden_utilities):
    return MechanismParams.defaults(golden_net, golden_utilities, rng_seed=7)


@pytest.fixture
def golden_subsidies(golden_net, golden_params):
    return assign_subsidies(golden_net, golden_params.rng_seed)
