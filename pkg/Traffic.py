"""
# Traffic.py
シード付きの合成PRB需要ジェネレーター。

value(t) = max(0, base + daily·sin(2πt/24 + φ_d) + weekly·sin(2πt/168 + φ_w)
               + trend·t/168 + noise(t) + burst(t))

noise(t) は N(0, noise_sigma)（ar_coefficient > 0 なら AR(1) 残差）、burst(t) は
確率 burst_probability で burst_scale·Exponential(1) を足す。乱数はカウンター型の
Philox で、同じ (profile, hours, seed) なら環境によらず同じ系列になる。

## シナリオJSON
```json
{
    "weeks": 2,
    "seed": 42,
    "start": "2024-01-01T00:00:00+00:00",
    "tenants": [
        {"tenant_id": "tenant-0", "base_load": 50, "daily_amplitude": 20, "weekly_amplitude": 5,
         "noise_sigma": 2, "burst_probability": 0.01, "burst_scale": 10, "trend_per_week": 0}
    ]
}
```
省略したプロファイル項目は既定値になる。

## 使い方
```python
import Traffic

series = Traffic.generate(TenantProfile(), hours=336, seed=42)
scenario = Traffic.load_scenario("scenario.json")
series_list = Traffic.generate_scenario(scenario, out_dir="out")
```
"""

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

import Series
from SeriesType import TimeSeries
from TrafficType import DEFAULT_START, SEASONAL_AR_PROFILE, ScenarioConfig, ScenarioError, TenantProfile


logger = logging.getLogger("Traffic")

SCENARIO_CSV = "scenario.csv"


def generate(
    profile: TenantProfile,
    hours: int,
    seed: int,
    tenant_id: str = "tenant-0",
    start: datetime = DEFAULT_START,
) -> TimeSeries:
    """プロファイルから hours 時間分の需要系列を作る

    Raises:
        ScenarioError: hours < 1 の場合
    """
    if hours < 1:
        raise ScenarioError(f"hours は1以上である必要があります: {hours}")
    rng = np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))
    t = np.arange(hours, dtype=np.float64)

    epsilon = rng.standard_normal(hours) * profile.noise_sigma
    burst_draw = rng.random(hours)
    burst_size = rng.standard_exponential(hours)

    if profile.ar_coefficient:
        noise = np.empty(hours)
        previous = 0.0
        for i in range(hours):
            previous = profile.ar_coefficient * previous + epsilon[i]
            noise[i] = previous
    else:
        noise = epsilon
    bursts = np.where(burst_draw < profile.burst_probability, profile.burst_scale * burst_size, 0.0)

    values = (
        profile.base_load
        + profile.daily_amplitude * np.sin(2.0 * np.pi * t / 24.0 + profile.daily_phase)
        + profile.weekly_amplitude * np.sin(2.0 * np.pi * t / 168.0 + profile.weekly_phase)
        + profile.trend_per_week * t / 168.0
        + noise
        + bursts
    )
    return TimeSeries(tenant_id, start, np.maximum(values, 0.0))


def tenant_seed(seed: int, index: int) -> int:
    """シナリオシードとテナント番号のハッシュのXOR"""
    digest = hashlib.sha256(f"tenant:{index}".encode("utf-8")).digest()
    return (int(seed) ^ int.from_bytes(digest[:8], "little")) & 0xFFFFFFFFFFFFFFFF


def generate_scenario(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None) -> List[TimeSeries]:
    """テナントごとの系列を作り、out_dir があれば scenario.csv に書き出す"""
    series_list = [
        generate(profile, cfg.hours, tenant_seed(cfg.seed, index), tenant_id, cfg.start)
        for index, (tenant_id, profile) in enumerate(cfg.tenants)
    ]
    if out_dir is not None:
        path = Series.write_csv(series_list, Path(out_dir) / SCENARIO_CSV)
        logger.info(f"シナリオを書き出しました: {path} ({len(series_list)} テナント × {cfg.hours} 時間)")
    return series_list


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """シナリオJSONを読み込む

    Raises:
        ScenarioError: ファイルがない、またはJSONが不正な場合
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            return ScenarioConfig.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"シナリオ読み込みエラー: {e}")


def benchmark_scenario(weeks: int, seed: int, kind: str = "default") -> ScenarioConfig:
    """ベンチマーク用の1テナントシナリオ（default または seasonal_ar）"""
    if kind == "default":
        profile = TenantProfile()
    elif kind == "seasonal_ar":
        profile = SEASONAL_AR_PROFILE
    else:
        raise ScenarioError(f"未知のベンチマークシナリオです: {kind}")
    return ScenarioConfig((("tenant-0", profile),), weeks, seed)
