"""テスト共通のフィクスチャと --runslow オプション"""

import numpy as np
import pytest

from EstimatorType import EstimatorConfig
from helpers import make_series, sinusoid


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="時間のかかる受け入れテストも実行する")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="--runslow が必要です")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    """数秒で学習できる小さなモデル設定"""
    return EstimatorConfig(
        kind="sff",
        epochs=2,
        hidden_dims=(8, 8),
        rnn_layers=1,
        cells_per_layer=8,
        model_dim=8,
        num_eval_samples=20,
        seed=7,
    )


@pytest.fixture
def two_week_series():
    return make_series(sinusoid(336, noise=1.0, seed=3))


@pytest.fixture
def constant_series():
    return make_series(np.full(120, 50.0))
