import numpy as np
import pytest

from a2sl import pipeline
from a2sl.config import RunConfig
from a2sl.forecaster import TrainConfig

# Small preset: 12 lakes x 5 years, split 3/1/1, short training.
SMALL = dict(n_lakes=12, n_years=5, train_end=3, val_end=4, runs=1)
SMALL_TRAIN = dict(epochs=3, pretrain_epochs=2, finetune_epochs=3)


def small_config(**kw):
    train = TrainConfig(**{**SMALL_TRAIN, **kw.pop("train", {})})
    return RunConfig(**{**SMALL, **kw}, train=train)


@pytest.fixture(scope="session")
def small_cfg():
    return small_config()


@pytest.fixture(scope="session")
def small_bench(small_cfg):
    return pipeline.make_benchmark(small_cfg)


@pytest.fixture(scope="session")
def small_models(small_bench, small_cfg):
    return pipeline.train_arms(small_bench, small_cfg, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
