import numpy as np
import pytest

from rate_in.data import gen_regression_splits
from rate_in.nn import init_network, regression_architecture, train_regression


@pytest.fixture(scope="session")
def regression_splits():
    # N=100 train/test, sigma=0.1, seed 123
    return gen_regression_splits(100, 100, 0.1, seed=123)


@pytest.fixture(scope="session")
def trained_net(regression_splits):
    train, _ = regression_splits
    return train_regression(train.inputs, train.y, regression_architecture(), epochs=1000, lr=0.01, seed=123)


@pytest.fixture(scope="session")
def held_out_inputs(regression_splits):
    return regression_splits[1].inputs


@pytest.fixture(scope="session")
def noisy_setup():
    """Net trained on sigma=0.5 data and its test split."""
    train, test = gen_regression_splits(100, 100, 0.5, seed=123)
    net = train_regression(train.inputs, train.y, regression_architecture(), epochs=1000, lr=0.01, seed=123)
    return net, test


@pytest.fixture
def small_net():
    return init_network(regression_architecture((8, 6)), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
