"""
# O1Codec.py
O1メッセージの符号化・復号（改行区切りUTF-8 JSON）とフレーム分割。

## 使い方
```python
frame = O1Codec.encode(message)          # b'{"version":1,...}\\n'
message = O1Codec.decode(frame)          # 不正なら O1DecodeError（field 属性あり）

splitter = O1Codec.FrameSplitter()
for frame in splitter.feed(chunk):       # 途中のフレームは次の feed まで保持
    ...
```
"""

import json
import math
from dataclasses import asdict
from datetime import datetime, timedelta
from typing import Any, Dict, Iterator, Optional

from O1Type import (
    MAX_MSG_ID,
    PROTOCOL_VERSION,
    AckPayload,
    AllocationPayload,
    ErrorPayload,
    HistoryPayload,
    MsgType,
    O1Message,
)


DEFAULT_HORIZON = 24
REQUIRED_FIELDS = ("version", "msg_type", "msg_id", "tenant_id", "timestamp", "payload")


class O1DecodeError(ValueError):
    """不正なフレーム

    Attributes:
        field (Optional[str]): 問題のあったフィールド名
    """

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


def _is_int(number: Any) -> bool:
    return isinstance(number, int) and not isinstance(number, bool)


def _check_timestamp(text: Any, name: str) -> str:
    if not isinstance(text, str):
        raise O1DecodeError(f"{name} は文字列である必要があります", name)
    try:
        moment = datetime.fromisoformat(text)
    except ValueError:
        raise O1DecodeError(f"{name} がISO-8601ではありません: {text!r}", name)
    if moment.utcoffset() != timedelta(0):
        raise O1DecodeError(f"{name} はUTCである必要があります: {text!r}", name)
    return text


def _payload_dict(msg: O1Message) -> Dict[str, Any]:
    payload = asdict(msg.payload)
    if isinstance(msg.payload, AllocationPayload):
        payload["prbs"] = list(msg.payload.prbs)
        if msg.payload.decision_id is None:
            del payload["decision_id"]
    return payload


def validate(msg: O1Message, horizon: int = DEFAULT_HORIZON) -> O1Message:
    """メッセージの不変条件を確認する（encode 前の検証にも使う）"""
    if msg.version != PROTOCOL_VERSION:
        raise O1DecodeError(f"未対応のバージョンです: {msg.version}", "version")
    if not _is_int(msg.msg_id) or not 0 <= msg.msg_id <= MAX_MSG_ID:
        raise O1DecodeError(f"msg_id が u64 ではありません: {msg.msg_id!r}", "msg_id")
    if not isinstance(msg.tenant_id, str):
        raise O1DecodeError("tenant_id は文字列である必要があります", "tenant_id")
    _check_timestamp(msg.timestamp, "timestamp")
    payload = msg.payload
    if msg.msg_type == MsgType.PRB_HISTORY_REPORT:
        demand = payload.demand
        if isinstance(demand, bool) or not isinstance(demand, (int, float)) or not math.isfinite(demand) or demand < 0:
            raise O1DecodeError(f"demand は0以上の有限な数である必要があります: {demand!r}", "payload.demand")
    elif msg.msg_type == MsgType.PRB_ALLOCATION:
        _check_timestamp(payload.forecast_start, "payload.forecast_start")
        if len(payload.prbs) != horizon:
            raise O1DecodeError(f"prbs の長さが {horizon} ではありません: {len(payload.prbs)}", "payload.prbs")
        if not all(_is_int(p) and p >= 0 for p in payload.prbs):
            raise O1DecodeError("prbs は0以上の整数である必要があります", "payload.prbs")
        if payload.decision_id is not None and not isinstance(payload.decision_id, str):
            raise O1DecodeError("decision_id は文字列である必要があります", "payload.decision_id")
    elif msg.msg_type == MsgType.ACK:
        if not _is_int(payload.ack_id) or not 0 <= payload.ack_id <= MAX_MSG_ID:
            raise O1DecodeError(f"ack_id が u64 ではありません: {payload.ack_id!r}", "payload.ack_id")
    elif msg.msg_type == MsgType.ERROR:
        if not isinstance(payload.code, str) or not isinstance(payload.text, str):
            raise O1DecodeError("code と text は文字列である必要があります", "payload.code")
    return msg


def encode(msg: O1Message, horizon: int = DEFAULT_HORIZON) -> bytes:
    """1フレーム（改行終端のJSON）に符号化する"""
    validate(msg, horizon)
    body = {
        "version": msg.version,
        "msg_type": msg.msg_type.value,
        "msg_id": msg.msg_id,
        "tenant_id": msg.tenant_id,
        "timestamp": msg.timestamp,
        "payload": _payload_dict(msg),
    }
    # json.dumps は改行をエスケープするので本文に改行は入らない
    return (json.dumps(body, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def _build_payload(msg_type: MsgType, raw: Any):
    if not isinstance(raw, dict):
        raise O1DecodeError("payload はオブジェクトである必要があります", "payload")

    def need(name: str):
        if name not in raw:
            raise O1DecodeError(f"payload.{name} がありません", f"payload.{name}")
        return raw[name]

    if msg_type == MsgType.PRB_HISTORY_REPORT:
        return HistoryPayload(need("demand"))
    if msg_type == MsgType.PRB_ALLOCATION:
        prbs = need("prbs")
        if not isinstance(prbs, list):
            raise O1DecodeError("payload.prbs は配列である必要があります", "payload.prbs")
        return AllocationPayload(need("forecast_start"), tuple(prbs), raw.get("decision_id"))
    if msg_type == MsgType.ACK:
        return AckPayload(need("ack_id"))
    return ErrorPayload(need("code"), need("text"))


def decode(frame: bytes, horizon: int = DEFAULT_HORIZON) -> O1Message:
    """完全なフレーム1つを復号する。未知のフィールドは無視する

    Raises:
        O1DecodeError: JSONが壊れている、必須フィールドがない、種別が未知、不変条件違反
    """
    try:
        body = json.loads(frame.rstrip(b"\r\n").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise O1DecodeError(f"JSONとして解釈できません: {e}", None)
    if not isinstance(body, dict):
        raise O1DecodeError("フレームはJSONオブジェクトである必要があります", None)
    for name in REQUIRED_FIELDS:
        if name not in body:
            raise O1DecodeError(f"{name} がありません", name)
    if not _is_int(body["version"]):
        raise O1DecodeError(f"version が整数ではありません: {body['version']!r}", "version")
    try:
        msg_type = MsgType(body["msg_type"])
    except ValueError:
        raise O1DecodeError(f"未知の msg_type です: {body['msg_type']!r}", "msg_type")
    msg = O1Message(
        msg_type=msg_type,
        msg_id=body["msg_id"],
        tenant_id=body["tenant_id"],
        timestamp=body["timestamp"],
        payload=_build_payload(msg_type, body["payload"]),
        version=body["version"],
    )
    return validate(msg, horizon)


class FrameSplitter:
    """バイト列を改行でフレームに分け、途中のフレームは保持する"""

    def __init__(self, max_frame: int = 1 << 20):
        self.buffer = b""
        self.max_frame = max_frame

    def feed(self, chunk: bytes) -> Iterator[bytes]:
        """完成したフレームを順に返す

        改行のない残りが max_frame を超えた場合は、同じ chunk の完成フレームを
        すべて返し終えてから残りを捨てて O1DecodeError を送出する。
        """
        self.buffer += chunk
        while b"\n" in self.buffer:
            frame, self.buffer = self.buffer.split(b"\n", 1)
            if frame.strip():
                yield frame + b"\n"
        if len(self.buffer) > self.max_frame:
            self.buffer = b""
            raise O1DecodeError("フレームが長すぎます", None)
