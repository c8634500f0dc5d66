"""
# OduServer.py
O1インターフェース越しにテナントの需要履歴を配信し、PRB割り当てを受け付ける模擬O-DU。

- 接続ごとに1ワーカー。接続した時点までの全レポートを送り、その後は
  シミュレーション時計（実時間 3600/speedup 秒で1時間）に合わせて1時間ずつ配信する。
- PRB_ALLOCATION を受けると記録して ACK（msg_id をそのまま返す）を送る。
- 不正なフレームには ERROR を返し、接続は維持する。
- 停止時に割り当てログを CSV（tenant_id,forecast_start,hour_index,prbs）に書き出す。

## 使い方
```python
server = OduServer(scenario, "127.0.0.1:7001", speedup=3600, allocation_log="allocations.csv")
host, port = server.start()
...
server.shutdown()
```
"""

import logging
import select
import socket
import socketserver
import threading
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd

import O1Codec
import Traffic
from Config import log_event
from O1Type import (
    AckPayload,
    AllocationRecord,
    ErrorPayload,
    HistoryPayload,
    MsgType,
    O1Message,
    OduState,
    iso_utc,
    parse_endpoint,
)
from TrafficType import ScenarioConfig


LOG_COLUMNS = ["tenant_id", "forecast_start", "hour_index", "prbs"]


class _OduTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, handler, odu: "OduServer"):
        self.odu = odu
        super().__init__(address, handler)


class _OduHandler(socketserver.BaseRequestHandler):
    """接続1本分のワーカー"""

    def handle(self):
        self.server.odu.serve_connection(self.request, self.client_address)


class OduServer:
    """模擬O-DUサーバー"""

    def __init__(
        self,
        scenario: ScenarioConfig,
        endpoint: str,
        speedup: float = 3600.0,
        allocation_log: Optional[Union[str, Path]] = None,
        horizon: int = O1Codec.DEFAULT_HORIZON,
        ack_delays: Optional[Sequence[float]] = None,
        logger: Optional[logging.Logger] = None,
    ):
        if speedup <= 0:
            raise ValueError(f"speedup は正である必要があります: {speedup}")
        self.scenario = scenario
        self.endpoint = endpoint
        self.hour_seconds = 3600.0 / speedup
        self.allocation_log = Path(allocation_log) if allocation_log else None
        self.horizon = horizon
        self.ack_delays: List[float] = list(ack_delays or [])
        self.logger = logger or logging.getLogger("OduServer")
        series_list = Traffic.generate_scenario(scenario)
        self.state = OduState({series.tenant_id: series for series in series_list})
        self.shutdown_event = threading.Event()
        self._server: Optional[_OduTCPServer] = None
        self._threads: List[threading.Thread] = []

    # ----------
    # ---起動と停止
    # ----------
    def start(self) -> Tuple[str, int]:
        """待ち受けを開始し、実際のアドレスを返す

        Raises:
            OSError: バインドできない場合
        """
        host, port = parse_endpoint(self.endpoint)
        self._server = _OduTCPServer((host, port), _OduHandler, self)
        serve = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        clock = threading.Thread(target=self._run_clock, daemon=True)
        self._threads = [serve, clock]
        for thread in self._threads:
            thread.start()
        address = self._server.server_address[:2]
        log_event(
            self.logger,
            "odu_start",
            f"模擬O-DUを開始しました: {address[0]}:{address[1]}",
            host=address[0],
            port=address[1],
            tenants=len(self.state.demand),
            hours=self.state.total_hours,
        )
        return address

    @property
    def address(self) -> Tuple[str, int]:
        return self._server.server_address[:2]

    def wait(self, timeout: Optional[float] = None) -> bool:
        """停止要求まで待つ"""
        return self.shutdown_event.wait(timeout)

    def shutdown(self) -> None:
        """サーバーを停止し、割り当てログを書き出す"""
        if self.shutdown_event.is_set() and self._server is None:
            return
        self.shutdown_event.set()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        for thread in self._threads:
            thread.join(timeout=5.0)
        if self.allocation_log is not None:
            self.dump_allocations(self.allocation_log)
        log_event(self.logger, "odu_stop", "模擬O-DUを停止しました", allocations=len(self.state.snapshot()))

    def _run_clock(self) -> None:
        while not self.shutdown_event.wait(self.hour_seconds):
            if self.state.now() >= self.state.total_hours:
                continue
            self.state.advance()

    # ----------
    # ---接続処理
    # ----------
    def _report(self, hour: int, index: int, tenant_id: str) -> bytes:
        series = self.state.demand[tenant_id]
        msg = O1Message(
            msg_type=MsgType.PRB_HISTORY_REPORT,
            msg_id=hour * len(self.state.demand) + index,
            tenant_id=tenant_id,
            timestamp=iso_utc(series.timestamp(hour)),
            payload=HistoryPayload(float(series.values[hour])),
        )
        return O1Codec.encode(msg, self.horizon)

    def serve_connection(self, sock: socket.socket, peer) -> None:
        """1接続分のレポート配信とフレーム処理"""
        log_event(self.logger, "odu_connect", f"接続を受け付けました: {peer}", peer=str(peer))
        splitter = O1Codec.FrameSplitter()
        tenants = list(self.state.demand.keys())
        next_hour = 0
        tick = min(0.05, self.hour_seconds / 2.0)
        try:
            while not self.shutdown_event.is_set():
                clock = self.state.now()
                while next_hour < clock:
                    for index, tenant_id in enumerate(tenants):
                        if next_hour < len(self.state.demand[tenant_id]):
                            sock.sendall(self._report(next_hour, index, tenant_id))
                    next_hour += 1

                readable, _, _ = select.select([sock], [], [], tick)
                if not readable:
                    continue
                chunk = sock.recv(4096)
                if not chunk:
                    break
                try:
                    for frame in splitter.feed(chunk):
                        sock.sendall(self.handle_frame(frame))
                except O1Codec.O1DecodeError as e:
                    sock.sendall(self._error(0, "MALFORMED", str(e)))
        except OSError as e:
            log_event(self.logger, "odu_connection_error", f"接続エラー: {e}", logging.WARNING, peer=str(peer))
        finally:
            log_event(self.logger, "odu_disconnect", f"接続を閉じました: {peer}", peer=str(peer))

    def _error(self, msg_id: int, code: str, text: str) -> bytes:
        msg = O1Message(MsgType.ERROR, msg_id, "", iso_utc(self.scenario.start), ErrorPayload(code, text))
        return O1Codec.encode(msg, self.horizon)

    def handle_frame(self, frame: bytes) -> bytes:
        """受信フレーム1つを処理し、返信フレームを返す"""
        try:
            msg = O1Codec.decode(frame, self.horizon)
        except O1Codec.O1DecodeError as e:
            log_event(self.logger, "odu_bad_frame", f"不正なフレーム: {e}", logging.WARNING, field=e.field)
            return self._error(0, "MALFORMED", f"{e.field}: {e}" if e.field else str(e))

        if msg.msg_type != MsgType.PRB_ALLOCATION:
            return self._error(msg.msg_id, "UNSUPPORTED", f"{msg.msg_type.value} は受け付けません")

        payload = msg.payload
        recorded = self.state.record(
            AllocationRecord(msg.tenant_id, payload.forecast_start, tuple(payload.prbs), payload.decision_id)
        )
        log_event(
            self.logger,
            "odu_allocation",
            f"割り当てを受信しました: {msg.tenant_id} {payload.forecast_start}",
            tenant_id=msg.tenant_id,
            forecast_start=payload.forecast_start,
            decision_id=payload.decision_id,
            duplicate=not recorded,
        )
        delay = self._next_ack_delay()
        if delay > 0 and self.shutdown_event.wait(delay):
            return b""
        ack = O1Message(MsgType.ACK, msg.msg_id, msg.tenant_id, msg.timestamp, AckPayload(msg.msg_id))
        return O1Codec.encode(ack, self.horizon)

    def _next_ack_delay(self) -> float:
        with self.state.lock:
            return self.ack_delays.pop(0) if self.ack_delays else 0.0

    # ----------
    # ---割り当てログ
    # ----------
    def allocation_rows(self) -> pd.DataFrame:
        rows = []
        for record in self.state.snapshot():
            for hour_index, prbs in enumerate(record.prbs):
                rows.append((record.tenant_id, record.forecast_start, hour_index, prbs))
        return pd.DataFrame(rows, columns=LOG_COLUMNS)

    def dump_allocations(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.allocation_rows().to_csv(path, index=False, lineterminator="\n")
        log_event(self.logger, "odu_dump", f"割り当てログを書き出しました: {path}", path=str(path))
        return path
