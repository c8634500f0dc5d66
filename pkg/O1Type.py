"""
# O1Type.py
模擬O1インターフェースのメッセージとO-DUの状態を表現するクラス。

ワイヤー上のフィールド名は ``version``, ``msg_type``, ``msg_id``, ``tenant_id``,
``timestamp``, ``payload`` に固定。
"""

import threading
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from SeriesType import TimeSeries


PROTOCOL_VERSION = 1
MAX_MSG_ID = 2**64 - 1


class MsgType(str, Enum):
    """メッセージ種別"""

    PRB_HISTORY_REPORT = "PRB_HISTORY_REPORT"
    PRB_ALLOCATION = "PRB_ALLOCATION"
    ACK = "ACK"
    ERROR = "ERROR"


@dataclass(frozen=True)
class HistoryPayload:
    """1時間分の需要報告"""

    demand: float


@dataclass(frozen=True)
class AllocationPayload:
    """horizon 時間分のPRB割り当て

    Attributes:
        forecast_start (str): 割り当て最初の時刻（ISO-8601 UTC）
        prbs (Tuple[int, ...]): 時間ごとのPRB数
        decision_id (Optional[str]): 再送時の重複排除用ID
    """

    forecast_start: str
    prbs: Tuple[int, ...]
    decision_id: Optional[str] = None


@dataclass(frozen=True)
class AckPayload:
    """受領確認（対象の msg_id を返す）"""

    ack_id: int


@dataclass(frozen=True)
class ErrorPayload:
    """エラー応答"""

    code: str
    text: str


Payload = Union[HistoryPayload, AllocationPayload, AckPayload, ErrorPayload]

PAYLOAD_TYPES = {
    MsgType.PRB_HISTORY_REPORT: HistoryPayload,
    MsgType.PRB_ALLOCATION: AllocationPayload,
    MsgType.ACK: AckPayload,
    MsgType.ERROR: ErrorPayload,
}


@dataclass(frozen=True)
class O1Message:
    """O1フレーム1つ分のメッセージ"""

    msg_type: MsgType
    msg_id: int
    tenant_id: str
    timestamp: str
    payload: Payload
    version: int = PROTOCOL_VERSION


def iso_utc(moment: datetime) -> str:
    return moment.isoformat()


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """"host:port" を (host, port) に分ける"""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"エンドポイントは host:port 形式である必要があります: {endpoint!r}")
    return host, int(port)


@dataclass(frozen=True)
class AllocationRecord:
    """O-DUが受け取った割り当て1件"""

    tenant_id: str
    forecast_start: str
    prbs: Tuple[int, ...]
    decision_id: Optional[str]


@dataclass
class OduState:
    """模擬O-DUの状態

    Attributes:
        demand (Dict[str, TimeSeries]): テナントごとの台本となる需要系列
        allocations (List[AllocationRecord]): 受信した割り当て（追記のみ）
        clock (int): シミュレーション時刻（時間、単調増加）
    """

    demand: Dict[str, TimeSeries]
    allocations: List[AllocationRecord] = field(default_factory=list)
    clock: int = 0
    seen_decisions: set = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def total_hours(self) -> int:
        return max(len(series) for series in self.demand.values())

    def advance(self) -> int:
        """時計を1時間進める（終端で止まる）"""
        with self.lock:
            if self.clock < self.total_hours:
                self.clock += 1
            return self.clock

    def now(self) -> int:
        with self.lock:
            return self.clock

    def record(self, record: AllocationRecord) -> bool:
        """割り当てを記録する。同じ decision_id は一度だけ記録し False を返す"""
        with self.lock:
            if record.decision_id is not None:
                if record.decision_id in self.seen_decisions:
                    return False
                self.seen_decisions.add(record.decision_id)
            self.allocations.append(record)
            return True

    def snapshot(self) -> List[AllocationRecord]:
        with self.lock:
            return list(self.allocations)
