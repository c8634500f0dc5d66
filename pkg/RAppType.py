"""
# RAppType.py
rAppのモニタリングストア、決定ポリシー、割り当て決定を表現するクラス。
"""

import hashlib
import threading
from dataclasses import dataclass, field, fields
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from SeriesType import HOUR, TimeSeries, as_utc


ROUNDINGS = ("ceil", "round", "floor")
POLICY_MODES = ("quantile", "cost")


class StoreRejection(ValueError):
    """重複・逆行・欠落したタイムスタンプの報告"""


class MonitoringStore:
    """テナントごとの追記専用バッファ（書き込み1・読み出し複数）

    タイムスタンプは1時間刻みで厳密に増加していなければならない。
    保持期間 retention_hours を超えた古い点は先頭から捨てる。
    """

    def __init__(self, retention_hours: int = 3360):
        if retention_hours < 1:
            raise ValueError(f"retention_hours は正である必要があります: {retention_hours}")
        self.retention_hours = retention_hours
        self._starts: Dict[str, datetime] = {}
        self._values: Dict[str, List[float]] = {}
        self._lock = threading.RLock()

    def append(self, tenant_id: str, timestamp: datetime, value: float) -> int:
        """1点追加し、追加後の長さを返す。未知のテナントは自動登録する

        Raises:
            StoreRejection: 重複・逆行・欠落（ストアは変更しない）
        """
        timestamp = as_utc(timestamp)
        with self._lock:
            values = self._values.get(tenant_id)
            if values is None:
                self._starts[tenant_id] = timestamp
                self._values[tenant_id] = [float(value)]
                return 1
            last = self._starts[tenant_id] + (len(values) - 1) * HOUR
            if timestamp <= last:
                raise StoreRejection(f"{tenant_id}: 重複または逆行したタイムスタンプです: {timestamp} <= {last}")
            if timestamp != last + HOUR:
                raise StoreRejection(f"{tenant_id}: タイムスタンプが欠落しています: {timestamp} != {last + HOUR}")
            values.append(float(value))
            overflow = len(values) - self.retention_hours
            if overflow > 0:
                del values[:overflow]
                self._starts[tenant_id] += overflow * HOUR
            return len(values)

    def snapshot(self, tenant_id: str) -> TimeSeries:
        """その時点の系列のコピー"""
        with self._lock:
            if tenant_id not in self._values:
                raise KeyError(f"未知のテナントです: {tenant_id}")
            return TimeSeries(tenant_id, self._starts[tenant_id], np.array(self._values[tenant_id]))

    def length(self, tenant_id: str) -> int:
        with self._lock:
            return len(self._values.get(tenant_id, ()))

    def last_timestamp(self, tenant_id: str) -> Optional[datetime]:
        with self._lock:
            if tenant_id not in self._values:
                return None
            return self._starts[tenant_id] + (len(self._values[tenant_id]) - 1) * HOUR

    def tenants(self) -> List[str]:
        with self._lock:
            return list(self._values.keys())


@dataclass(frozen=True)
class PolicyConfig:
    """決定エンジンのポリシー

    Attributes:
        quantile_level (int): 割り当てに使うパーセンタイル（1〜99）
        rounding (str): ceil / round（四捨五入） / floor
        min_prbs (int): 下限
        max_prbs (int): 上限
        mode (str): quantile（固定パーセンタイル）/ cost（過不足コスト比から決める）
        cost_under (float): 不足1PRBあたりのコスト
        cost_over (float): 過剰1PRBあたりのコスト
    """

    quantile_level: int = 90
    rounding: str = "ceil"
    min_prbs: int = 0
    max_prbs: int = 273
    mode: str = "quantile"
    cost_under: float = 9.0
    cost_over: float = 1.0

    def __post_init__(self):
        if not 1 <= int(self.quantile_level) <= 99:
            raise ValueError(f"quantile_level は1〜99である必要があります: {self.quantile_level}")
        if self.rounding not in ROUNDINGS:
            raise ValueError(f"rounding は {ROUNDINGS} のいずれかである必要があります: {self.rounding}")
        if self.mode not in POLICY_MODES:
            raise ValueError(f"mode は {POLICY_MODES} のいずれかである必要があります: {self.mode}")
        if not 0 <= int(self.min_prbs) <= int(self.max_prbs):
            raise ValueError(f"0 ≤ min_prbs ≤ max_prbs である必要があります: {self.min_prbs}, {self.max_prbs}")
        if self.cost_under <= 0 or self.cost_over <= 0:
            raise ValueError("cost_under と cost_over は正である必要があります")

    def effective_level(self) -> int:
        """cost モードでは 100·c_under/(c_under + c_over) を1〜99に丸める"""
        if self.mode == "quantile":
            return int(self.quantile_level)
        level = int(np.floor(100.0 * self.cost_under / (self.cost_under + self.cost_over) + 0.5))
        return min(99, max(1, level))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PolicyConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names and v is not None})


@dataclass(frozen=True)
class Decision:
    """1テナントの次の horizon 時間分のPRB割り当て

    Attributes:
        tenant_id (str): テナント
        forecast_start (datetime): 最初の割り当て時刻
        allocations (Tuple[int, ...]): 時間ごとのPRB数
        model_kind (str): 予測に使ったモデル
        quantile_level (int): 使ったパーセンタイル
        predictor_fingerprint (str): 予測器の指紋
        train_seconds (Optional[float]): 学習の実時間（比較・ハッシュには含めない）
        predict_seconds (Optional[float]): 予測の実時間（比較・ハッシュには含めない）
        holdout_mse (Optional[float]): 検証区間のMSE（比較・ハッシュには含めない）
    """

    tenant_id: str
    forecast_start: datetime
    allocations: Tuple[int, ...]
    model_kind: str
    quantile_level: int
    predictor_fingerprint: str
    train_seconds: Optional[float] = field(default=None, compare=False)
    predict_seconds: Optional[float] = field(default=None, compare=False)
    holdout_mse: Optional[float] = field(default=None, compare=False)

    @property
    def decision_id(self) -> str:
        """内容ハッシュ（再送時の重複排除に使う）"""
        text = "|".join(
            [
                self.tenant_id,
                self.forecast_start.isoformat(),
                ",".join(str(a) for a in self.allocations),
                self.model_kind,
                str(self.quantile_level),
                self.predictor_fingerprint,
            ]
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    @property
    def msg_id(self) -> int:
        return int(self.decision_id, 16)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "decision_id": self.decision_id,
            "tenant_id": self.tenant_id,
            "forecast_start": self.forecast_start.isoformat(),
            "allocations": list(self.allocations),
            "model_kind": self.model_kind,
            "quantile_level": self.quantile_level,
            "predictor_fingerprint": self.predictor_fingerprint,
            "train_seconds": self.train_seconds,
            "predict_seconds": self.predict_seconds,
            "holdout_mse": self.holdout_mse,
        }
