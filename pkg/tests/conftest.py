import numpy as np
import pytest

from pmiprint.dataset import generate_synthetic, split_pools
from pmiprint.nn import MlpModel, TrainConfig, train


@pytest.fixture(scope="session")
def small_pools():
    data = generate_synthetic(seed=5, c=3, d=4, per_class=120, spread=1.0)
    return split_pools(data, 0.5, seed=6, stratify=True)


@pytest.fixture(scope="session")
def small_model(small_pools):
    return train(small_pools, TrainConfig(epochs=5, hidden=8, seed=7))


@pytest.fixture
def hand_model():
    """2-2-2 network used for pencil-and-paper forward passes."""
    return MlpModel(W1=np.array([[1.0, 0.0], [0.0, 1.0]]), b1=np.array([0.0, -1.0]),
                    W2=np.array([[1.0, 1.0], [2.0, -1.0]]), b2=np.array([0.5, 0.0]))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
