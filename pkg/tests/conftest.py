import numpy as np
import pytest

from ccsrp.config import DataConfig
from ccsrp.training import TrainConfig, pretrain

from helpers import DESK_SHAPE, DESK_SPECS

_CRITERIA = []


@pytest.fixture(scope="session")
def desk_data():
    return DataConfig().load()


@pytest.fixture(scope="session")
def plain_net(desk_data):
    train, _ = desk_data
    cfg = TrainConfig(epochs=3, batch_size=32, trades_beta=0.0)
    return pretrain(DESK_SPECS, DESK_SHAPE, train, cfg, seed=0)


@pytest.fixture(scope="session")
def trades_net(desk_data):
    train, _ = desk_data
    cfg = TrainConfig(epochs=3, batch_size=32)
    return pretrain(DESK_SPECS, DESK_SHAPE, train, cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, name, passed, detail)``."""
    def record(number, name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name}"
        if detail:
            line += f" ({detail})"
        _CRITERIA.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
