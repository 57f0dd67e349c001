import numpy as np
import pytest

from mutagame.config import SimConfig
from mutagame.model import ActionConstants, MinerAgent, ProtocolState, RewardSchedule


@pytest.fixture
def default_cfg():
    return SimConfig()


@pytest.fixture
def constants():
    return ActionConstants()


@pytest.fixture
def state():
    return ProtocolState()


@pytest.fixture
def schedule():
    return RewardSchedule()


def make_agents(shares, opex_total=29.166666666666668, **kwargs):
    return [
        MinerAgent(id=i, hash_share=s, opex_rate=s * opex_total, **kwargs)
        for i, s in enumerate(shares)
    ]


def concentration(gamma_max, n=10):
    return [gamma_max] + [(1.0 - gamma_max) / (n - 1)] * (n - 1)


@pytest.fixture
def golden_agents():
    return make_agents(concentration(0.4))


def rng(seed=0):
    return np.random.default_rng(seed)
