"""
# O1Client.py
模擬O-DUにつなぎ、需要レポートを受け取り、PRB割り当てを送るためのクラス。
トランスポートは pyserial の ``socket://host:port`` URL ハンドラーを使う。

## 使い方
```python
from O1Client import O1Client

# ---接続を開始
client = O1Client("127.0.0.1:7001")
client.connect()

# ---レポートの受信
for message in client.reports(idle_timeout=5.0):
    print(message.tenant_id, message.payload.demand)

# ---割り当ての送信（ACKを待つ）
ack = client.send_allocation(allocation_message, timeout=2.0)

# ---接続を終了
client.disconnect()
```

切断されたら接続し直す（再購読）。サーバーは再接続時に最初から配信し直すので
配信は at-least-once になり、重複は受信側がタイムスタンプで取り除く。

受信スレッドとアクチュエーターのように、next_message と send_allocation を別スレッドから
同時に呼んでよい。読み取りはその時点で読み取りロックを取れたスレッドが担当し、
届いたフレームを ACK/ERROR（msg_id ごと）とそれ以外（到着順）に振り分ける。
"""

import logging
import threading
import time
from collections import deque
from typing import Deque, Dict, Iterator, Optional

import serial

import O1Codec
from Config import log_event
from O1Type import MsgType, O1Message, parse_endpoint


# ----------
# ---例外クラスの定義
# ----------
class O1ConnectionError(ConnectionError):
    """接続できない・接続が切れた"""


class O1TimeoutError(TimeoutError):
    """ACKが時間内に届かない"""


class O1NackError(RuntimeError):
    """O-DUがERRORで応答した"""


# ----------
# ----------
# ----------
class O1Client:
    """模擬O1インターフェースのクライアントセッション"""

    def __init__(
        self,
        endpoint: str,
        read_timeout: float = 0.1,
        connect_attempts: int = 10,
        reconnect_backoff: float = 0.2,
        horizon: int = O1Codec.DEFAULT_HORIZON,
        logger: Optional[logging.Logger] = None,
    ):
        parse_endpoint(endpoint)
        self.endpoint = endpoint
        self.read_timeout = read_timeout
        self.connect_attempts = max(1, connect_attempts)
        self.reconnect_backoff = reconnect_backoff
        self.horizon = horizon
        self.logger = logger or logging.getLogger("O1Client")
        self.conn: Optional[serial.SerialBase] = None
        self._partial = b""
        self._pending: Deque[O1Message] = deque()
        self._replies: Dict[int, O1Message] = {}
        self._conn_lock = threading.RLock()
        self._read_lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._arrived = threading.Condition()
        self.reconnects = 0

    # ----------
    # ---接続関連のメソッド
    # ----------
    def _open(self) -> None:
        self.conn = serial.serial_for_url(f"socket://{self.endpoint}", timeout=self.read_timeout)
        self._partial = b""

    def connect(self, attempts: Optional[int] = None) -> None:
        """接続を開始する。失敗したら指数バックオフで再試行する

        Raises:
            O1ConnectionError: すべての試行で接続できなかった場合
        """
        attempts = attempts or self.connect_attempts
        last_error: Optional[Exception] = None
        with self._conn_lock:
            for attempt in range(attempts):
                try:
                    self._open()
                    log_event(self.logger, "o1_connect", f"接続しました: {self.endpoint}", endpoint=self.endpoint)
                    return
                except (serial.SerialException, OSError) as e:
                    last_error = e
                    if attempt + 1 < attempts:
                        time.sleep(min(self.reconnect_backoff * (2**attempt), 2.0))
        raise O1ConnectionError(f"接続エラー: {self.endpoint}: {last_error}")

    def disconnect(self) -> None:
        """接続を終了"""
        with self._conn_lock:
            if self.conn is not None:
                try:
                    self.conn.close()
                except (serial.SerialException, OSError):
                    pass
                self.conn = None

    def _reconnect(self, reason: Exception) -> None:
        log_event(
            self.logger, "o1_reconnect", f"接続が切れました。再接続します: {reason}", logging.WARNING, endpoint=self.endpoint
        )
        with self._conn_lock:
            self.disconnect()
            self.reconnects += 1
            self.connect()

    def _connection(self) -> serial.SerialBase:
        with self._conn_lock:
            if not self.is_open:
                self.connect()
            return self.conn

    @property
    def is_open(self) -> bool:
        return self.conn is not None and self.conn.is_open

    # ----------
    # ---フレームの受信と振り分け
    # ----------
    def _read_frame(self) -> Optional[O1Message]:
        """1フレームを読む。タイムアウトで途中までなら保持して None"""
        conn = self._connection()
        try:
            line = conn.readline()
        except (serial.SerialException, OSError) as e:
            self._reconnect(e)
            return None
        if not line:
            return None
        self._partial += line
        if not self._partial.endswith(b"\n"):
            return None
        frame, self._partial = self._partial, b""
        try:
            return O1Codec.decode(frame, self.horizon)
        except O1Codec.O1DecodeError as e:
            log_event(self.logger, "o1_bad_frame", f"不正なフレームを破棄しました: {e}", logging.WARNING, field=e.field)
            return None

    def _pump(self, wait: float) -> None:
        """読み取りロックが取れれば1フレーム読んで振り分け、取れなければ到着を待つ"""
        if not self._read_lock.acquire(blocking=False):
            with self._arrived:
                self._arrived.wait(wait)
            return
        try:
            msg = self._read_frame()
        finally:
            self._read_lock.release()
        with self._arrived:
            if msg is not None:
                if msg.msg_type == MsgType.ACK:
                    self._replies[msg.payload.ack_id] = msg
                elif msg.msg_type == MsgType.ERROR:
                    self._replies[msg.msg_id] = msg
                else:
                    self._pending.append(msg)
            self._arrived.notify_all()

    def _take_reply(self, msg_id: int) -> Optional[O1Message]:
        with self._arrived:
            reply = self._replies.pop(msg_id, None)
            if reply is None:
                malformed = self._replies.get(0)
                if malformed is not None and malformed.msg_type == MsgType.ERROR:
                    reply = self._replies.pop(0)
            return reply

    def next_message(self, timeout: float) -> Optional[O1Message]:
        """ACK/ERROR 以外のメッセージを到着順に返す。timeout 秒で何も来なければ None"""
        deadline = time.monotonic() + timeout
        while True:
            with self._arrived:
                if self._pending:
                    return self._pending.popleft()
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self._pump(min(remaining, self.read_timeout))

    def reports(self, idle_timeout: float = 30.0) -> Iterator[O1Message]:
        """レポートを到着順に返す。idle_timeout 秒途切れたら終わる"""
        while True:
            msg = self.next_message(idle_timeout)
            if msg is None:
                return
            if msg.msg_type == MsgType.PRB_HISTORY_REPORT:
                yield msg

    # ----------
    # ---送信
    # ----------
    def send(self, msg: O1Message) -> None:
        frame = O1Codec.encode(msg, self.horizon)
        with self._write_lock:
            conn = self._connection()
            try:
                conn.write(frame)
                conn.flush()
            except (serial.SerialException, OSError) as e:
                self.disconnect()
                raise O1ConnectionError(f"送信エラー: {e}")

    def send_allocation(self, msg: O1Message, timeout: float = 2.0) -> O1Message:
        """割り当てを送り、同じ msg_id の ACK を待つ

        待っている間に届いたレポートは順序を保って後で next_message が返す。
        前回の送信に遅れて届いた同じ msg_id の ACK も受け取る。

        Raises:
            O1ConnectionError: 送信できない場合
            O1TimeoutError: timeout 内にACKが来ない場合
            O1NackError: ERRORが返った場合
        """
        self.send(msg)
        deadline = time.monotonic() + timeout
        while True:
            reply = self._take_reply(msg.msg_id)
            if reply is not None:
                if reply.msg_type == MsgType.ERROR:
                    raise O1NackError(f"O-DUがエラーを返しました: {reply.payload.code}: {reply.payload.text}")
                return reply
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise O1TimeoutError(f"ACKがタイムアウトしました: msg_id={msg.msg_id}")
            self._pump(min(remaining, self.read_timeout))
