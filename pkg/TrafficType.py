"""
# TrafficType.py
合成PRB需要のテナントプロファイルとシナリオ設定。
"""

from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from typing import Any, Dict, List, Tuple

import numpy as np

from SeriesType import as_utc


BENCHMARK_WEEKS = (2, 4, 10, 20)
DEFAULT_START = datetime(2024, 1, 1, tzinfo=timezone.utc)


class ScenarioError(ValueError):
    """シナリオ設定の不正"""


@dataclass(frozen=True)
class TenantProfile:
    """テナント1つ分の需要生成パラメータ

    Attributes:
        base_load (float): 基本負荷
        daily_amplitude (float): 24時間周期の振幅
        weekly_amplitude (float): 168時間周期の振幅
        noise_sigma (float): ガウス雑音の標準偏差
        burst_probability (float): 1時間あたりのバースト発生確率
        burst_scale (float): バーストの大きさ（×Exponential(1)）
        trend_per_week (float): 1週間あたりのトレンド
        ar_coefficient (float): 雑音のAR(1)係数（0なら白色雑音）
        daily_phase (float): 日周期の位相
        weekly_phase (float): 週周期の位相
    """

    base_load: float = 50.0
    daily_amplitude: float = 20.0
    weekly_amplitude: float = 5.0
    noise_sigma: float = 2.0
    burst_probability: float = 0.01
    burst_scale: float = 10.0
    trend_per_week: float = 0.0
    ar_coefficient: float = 0.0
    daily_phase: float = 0.0
    weekly_phase: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            number = getattr(self, f.name)
            if not np.isfinite(number):
                raise ScenarioError(f"{f.name} が有限ではありません: {number}")
        for name in ("base_load", "daily_amplitude", "weekly_amplitude", "noise_sigma", "burst_scale"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"{name} は0以上である必要があります: {getattr(self, name)}")
        if not 0.0 <= self.burst_probability <= 1.0:
            raise ScenarioError(f"burst_probability は [0, 1] である必要があります: {self.burst_probability}")
        if not -1.0 < self.ar_coefficient < 1.0:
            raise ScenarioError(f"ar_coefficient は (-1, 1) である必要があります: {self.ar_coefficient}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TenantProfile":
        names = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in data.items() if k in names})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


SEASONAL_AR_PROFILE = TenantProfile(noise_sigma=2.0, burst_probability=0.0, ar_coefficient=0.8)


@dataclass(frozen=True)
class ScenarioConfig:
    """シナリオ設定

    Attributes:
        tenants (Tuple[Tuple[str, TenantProfile], ...]): (tenant_id, プロファイル) の組
        weeks (int): 生成する週数
        seed (int): シナリオの乱数シード
        start (datetime): 最初の時刻（UTC）
    """

    tenants: Tuple[Tuple[str, TenantProfile], ...]
    weeks: int
    seed: int = 42
    start: datetime = DEFAULT_START

    def __post_init__(self):
        object.__setattr__(self, "tenants", tuple((str(t), p) for t, p in self.tenants))
        object.__setattr__(self, "start", as_utc(self.start))
        if not self.tenants:
            raise ScenarioError("テナントが1つもありません")
        ids = [t for t, _ in self.tenants]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"tenant_id が重複しています: {ids}")
        if int(self.weeks) < 1:
            raise ScenarioError(f"weeks は正である必要があります: {self.weeks}")

    @property
    def hours(self) -> int:
        return int(self.weeks) * 168

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioConfig":
        """JSON文書（weeks, seed, start, tenants）から作る"""
        try:
            tenants: List[Tuple[str, TenantProfile]] = []
            for entry in data["tenants"]:
                tenants.append((str(entry["tenant_id"]), TenantProfile.from_dict(entry)))
            start = datetime.fromisoformat(data["start"]) if data.get("start") else DEFAULT_START
            return cls(tuple(tenants), int(data["weeks"]), int(data.get("seed", 42)), start)
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"シナリオ文書が不正です: {e}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weeks": self.weeks,
            "seed": self.seed,
            "start": self.start.isoformat(),
            "tenants": [dict(tenant_id=t, **p.to_dict()) for t, p in self.tenants],
        }
