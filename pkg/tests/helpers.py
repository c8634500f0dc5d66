"""テスト用の系列ヘルパー"""

from datetime import datetime, timezone

import numpy as np

from SeriesType import SampleForecast, TimeSeries


START = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_series(values, tenant_id="tenant-0", start=START) -> TimeSeries:
    return TimeSeries(tenant_id, start, np.asarray(values, dtype=np.float64))


def sinusoid(hours: int, amplitude: float = 20.0, base: float = 50.0, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(hours)
    values = base + amplitude * np.sin(2.0 * np.pi * t / 24.0)
    if noise:
        values = values + rng.normal(0.0, noise, size=hours)
    return np.maximum(values, 0.0)


class OraclePredictor:
    """真の将来値を1サンプルとして返す予測器"""

    def __init__(self, full: TimeSeries, horizon: int = 24):
        self.full = full
        self.horizon = horizon

    def predict(self, context: TimeSeries, seed: int) -> SampleForecast:
        offset = int((context.end - self.full.start) / self.full.step) + 1
        future = self.full.values[offset : offset + self.horizon]
        return SampleForecast(context.end + self.full.step, future[None, :])


class ConstantPredictor:
    """常に同じ値を返す予測器"""

    def __init__(self, level: float, horizon: int = 24):
        self.level = level
        self.horizon = horizon

    def predict(self, context: TimeSeries, seed: int) -> SampleForecast:
        return SampleForecast(context.end + context.step, np.full((1, self.horizon), self.level))


class SeasonalNaivePredictor:
    """直近24時間をそのまま繰り返す予測器"""

    def __init__(self, horizon: int = 24, period: int = 24):
        self.horizon = horizon
        self.period = period

    def predict(self, context: TimeSeries, seed: int) -> SampleForecast:
        path = np.resize(context.values[-self.period :], self.horizon)
        return SampleForecast(context.end + context.step, path[None, :])
