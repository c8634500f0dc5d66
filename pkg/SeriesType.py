"""
# SeriesType.py
テナントのPRB需要時系列と予測分布を表現するデータクラス。

すべて生成後は不変（frozen）。値は numpy 配列で保持し、書き込み不可にする。
"""

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Tuple

import numpy as np


HOUR = timedelta(hours=1)
QUANTILE_LEVELS: Tuple[int, ...] = tuple(range(1, 100))


class SeriesError(ValueError):
    """時系列・予測データの不変条件違反"""


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise SeriesError(f"{name} の次元が不正です: {array.ndim} != {ndim}")
    if not np.all(np.isfinite(array)):
        raise SeriesError(f"{name} に有限でない値が含まれています")
    array.setflags(write=False)
    return array


def as_utc(moment: datetime) -> datetime:
    """タイムゾーンなしの日時はUTCとして扱う"""
    if moment.tzinfo is None:
        return moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


@dataclass(frozen=True)
class TimeSeries:
    """1テナントの1時間刻みPRB需要履歴

    Attributes:
        tenant_id (str): テナント識別子
        start (datetime): 最初の点のUTC時刻
        values (np.ndarray): 需要値（PRB数、0以上の実数）
        step (timedelta): 刻み幅（1時間固定）
    """

    tenant_id: str
    start: datetime
    values: np.ndarray
    step: timedelta = HOUR

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        values = _frozen(self.values, 1, "values")
        if values.size == 0:
            raise SeriesError("時系列が空です")
        if np.any(values < 0):
            raise SeriesError("需要値は0以上である必要があります")
        if self.step <= timedelta(0):
            raise SeriesError(f"刻み幅が正ではありません: {self.step}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def end(self) -> datetime:
        """最後の点の時刻"""
        return self.timestamp(len(self) - 1)

    def timestamp(self, index: int) -> datetime:
        return self.start + index * self.step

    def timestamps(self) -> list:
        return [self.timestamp(i) for i in range(len(self))]

    def slice(self, begin: int, end: int) -> "TimeSeries":
        """[begin, end) の部分系列（タイムスタンプを保つ）"""
        return TimeSeries(self.tenant_id, self.timestamp(begin), self.values[begin:end], self.step)

    def tail(self, count: int) -> "TimeSeries":
        return self.slice(max(0, len(self) - count), len(self))

    def concat(self, other: "TimeSeries") -> "TimeSeries":
        """直後に続く系列を連結する"""
        if other.start != self.end + self.step:
            raise SeriesError(f"連結できない時刻です: {other.start} != {self.end + self.step}")
        return TimeSeries(self.tenant_id, self.start, np.concatenate([self.values, other.values]), self.step)

    def calendar(self, count: int = None, offset: int = 0) -> np.ndarray:
        """時刻共変量 (hour/24, weekday/7) を offset から count 点分返す"""
        count = len(self) - offset if count is None else count
        return calendar_features(self.timestamp(offset), count, self.step)


def calendar_features(start: datetime, count: int, step: timedelta = HOUR) -> np.ndarray:
    """count 点分の (hour-of-day/24, day-of-week/7) 行列"""
    features = np.empty((count, 2), dtype=np.float64)
    for i in range(count):
        moment = start + i * step
        features[i, 0] = moment.hour / 24.0
        features[i, 1] = moment.weekday() / 7.0
    return features


@dataclass(frozen=True)
class SampleForecast:
    """予測分布のサンプルパス

    Attributes:
        start (datetime): 最初の予測時刻
        samples (np.ndarray): num_samples × horizon の行列
    """

    start: datetime
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        samples = _frozen(self.samples, 2, "samples")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise SeriesError(f"サンプル行列の形状が不正です: {samples.shape}")
        object.__setattr__(self, "samples", samples)

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.samples.shape[1])


@dataclass(frozen=True)
class QuantileForecast:
    """1〜99パーセンタイルの予測行列（行 k-1 が第kパーセンタイル）"""

    start: datetime
    values: np.ndarray
    levels: Tuple[int, ...] = field(default=QUANTILE_LEVELS)

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        values = _frozen(self.values, 2, "values")
        if values.shape[0] != len(self.levels):
            raise SeriesError(f"パーセンタイル行数が不正です: {values.shape[0]}")
        if np.any(np.diff(values, axis=0) < 0):
            raise SeriesError("パーセンタイルが交差しています")
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return int(self.values.shape[1])

    def level(self, k: int) -> np.ndarray:
        """第kパーセンタイルの行"""
        if k not in self.levels:
            raise SeriesError(f"未定義のパーセンタイルです: {k}")
        return self.values[self.levels.index(k)]


@dataclass(frozen=True)
class PointForecast:
    """点予測 ŷ"""

    start: datetime
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        object.__setattr__(self, "values", _frozen(self.values, 1, "values"))

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class Scaler:
    """訓練データだけで求めたアフィン標準化"""

    mean: float
    scale: float

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(float(data["mean"]), float(data["scale"]))
