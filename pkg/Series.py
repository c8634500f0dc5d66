"""
# Series.py
時系列の分割、分位点抽出、評価指標、標準化、CSV入出力。

## 使い方
```python
import Series

train, test = Series.split_train_test(series, 0.8)
scaler, scaled = Series.standardize(train)
quantiles = Series.to_quantiles(sample_forecast)
point = Series.mean_point(sample_forecast)
error = Series.mse(test.values[:24], point)
```

CSV形式（UTF-8）:
```
tenant_id,timestamp_iso8601,prb_demand
tenant-0,2024-01-01T00:00:00+00:00,51.23
```
"""

from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

from SeriesType import (
    HOUR,
    QUANTILE_LEVELS,
    PointForecast,
    QuantileForecast,
    SampleForecast,
    Scaler,
    SeriesError,
    TimeSeries,
)


CSV_COLUMNS = ["tenant_id", "timestamp_iso8601", "prb_demand"]

ArrayLike = Union[TimeSeries, PointForecast, np.ndarray, List[float]]


def _values(data: ArrayLike) -> np.ndarray:
    if isinstance(data, (TimeSeries, PointForecast)):
        return data.values
    return np.asarray(data, dtype=np.float64)


def split_train_test(series: TimeSeries, train_fraction: float) -> Tuple[TimeSeries, TimeSeries]:
    """先頭 ⌊len·train_fraction⌋ 点を訓練、残りをテストに分割する

    Raises:
        SeriesError: 比率が (0, 1) にない、またはどちらかが空になる場合
    """
    if not 0.0 < train_fraction < 1.0:
        raise SeriesError(f"train_fraction は (0, 1) の範囲である必要があります: {train_fraction}")
    cut = int(np.floor(len(series) * train_fraction))
    if cut < 1 or cut >= len(series):
        raise SeriesError(f"系列が短すぎて分割できません: len={len(series)}, fraction={train_fraction}")
    return series.slice(0, cut), series.slice(cut, len(series))


def to_quantiles(forecast: SampleForecast) -> QuantileForecast:
    """サンプルから1〜99パーセンタイルを求める（順序統計量間の線形補間）"""
    if forecast.num_samples < 2:
        raise SeriesError(f"分位点には2サンプル以上必要です: {forecast.num_samples}")
    levels = np.asarray(QUANTILE_LEVELS, dtype=np.float64) / 100.0
    values = np.quantile(forecast.samples, levels, axis=0, method="linear")
    # 丸め誤差による交差を除く
    values = np.maximum.accumulate(values, axis=0)
    return QuantileForecast(forecast.start, values)


def mean_point(forecast: SampleForecast) -> PointForecast:
    """各時刻のサンプル平均 ŷ = mean(𝒴)"""
    return PointForecast(forecast.start, forecast.samples.mean(axis=0))


def mse(actual: ArrayLike, predicted: ArrayLike) -> float:
    """平均二乗誤差 (1/𝒩)·Σ|xᵢ − ŷᵢ|²"""
    x = _values(actual)
    y = _values(predicted)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise SeriesError(f"長さが一致しません: {x.shape} != {y.shape}")
    if isinstance(actual, TimeSeries) and isinstance(predicted, PointForecast):
        if actual.start != predicted.start:
            raise SeriesError(f"時刻が揃っていません: {actual.start} != {predicted.start}")
    diff = x - y
    return float(np.mean(diff * diff))


def interval_coverage(quantiles: QuantileForecast, actual: ArrayLike, lo_level: int, hi_level: int) -> float:
    """q[lo] ≤ actual ≤ q[hi] となる時刻の割合"""
    if not 1 <= lo_level < hi_level <= 99:
        raise SeriesError(f"パーセンタイルの順序が不正です: {lo_level}, {hi_level}")
    x = _values(actual)
    if x.shape != (quantiles.horizon,):
        raise SeriesError(f"長さが一致しません: {x.shape[0]} != {quantiles.horizon}")
    inside = (quantiles.level(lo_level) <= x) & (x <= quantiles.level(hi_level))
    return float(np.mean(inside))


def fit_scaler(values: np.ndarray) -> Scaler:
    """母標準偏差で標準化係数を求める（標準偏差0なら1で割る）"""
    values = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(values))
    sd = float(np.std(values))
    return Scaler(mean, sd if sd > 0.0 else 1.0)


def standardize(train: TimeSeries) -> Tuple[Scaler, np.ndarray]:
    """訓練系列で求めたスケーラーと標準化済みの値を返す

    標準化後の値は負になり得るので TimeSeries ではなく配列で返す。
    """
    scaler = fit_scaler(train.values)
    return scaler, scaler.transform(train.values)


# ----------
# ---CSV入出力
# ----------
def series_frame(series_list: Iterable[TimeSeries]) -> pd.DataFrame:
    frames = []
    for series in series_list:
        frames.append(
            pd.DataFrame(
                {
                    "tenant_id": series.tenant_id,
                    "timestamp_iso8601": [t.isoformat() for t in series.timestamps()],
                    "prb_demand": series.values,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def write_csv(series_list: Iterable[TimeSeries], path: Union[str, Path]) -> Path:
    """時系列をCSVに書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series_frame(series_list).to_csv(path, index=False, columns=CSV_COLUMNS, lineterminator="\n")
    return path


def read_csv(path: Union[str, Path]) -> Dict[str, TimeSeries]:
    """CSVを読み込み、テナントごとの時系列を返す

    Raises:
        SeriesError: ヘッダー不一致、時刻の逆行、1時間でない刻み
    """
    frame = pd.read_csv(path, dtype={"tenant_id": str}, float_precision="round_trip")
    if list(frame.columns) != CSV_COLUMNS:
        raise SeriesError(f"CSVヘッダーが不正です: {list(frame.columns)}")
    result: Dict[str, TimeSeries] = {}
    for tenant_id, rows in frame.groupby("tenant_id", sort=False):
        stamps = pd.to_datetime(rows["timestamp_iso8601"], utc=True)
        steps = stamps.diff().dropna()
        if len(steps) and not (steps == pd.Timedelta(HOUR)).all():
            raise SeriesError(f"{tenant_id}: 時刻が1時間刻みで増加していません")
        result[str(tenant_id)] = TimeSeries(
            str(tenant_id), stamps.iloc[0].to_pydatetime(), rows["prb_demand"].to_numpy(dtype=np.float64)
        )
    return result
