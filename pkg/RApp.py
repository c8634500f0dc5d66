"""
# RApp.py
テナントごとのPRB需要を予測し、次の24時間分のPRB割り当てをO-DUに送るrApp。

- MonitoringSystem: O1の需要レポートをモニタリングストアに追記する
- AnalyticalEngine: 標準化・訓練/検証分割・学習・予測を行い、分位点を返す
- DecisionEngine: 分位点からポリシーに従って時間ごとのPRB数を決める
- Actuator: 割り当てをO1で送り、ACKを待つ（再送あり）

各段は順序付きキューを1つずつ持ち、RApp.step() が上流から順に処理する。
分析だけは analytics_workers > 1 のときテナント間で並列に実行する。

## 使い方
```python
from Config import AppConfig
from O1Client import O1Client
from RApp import RApp

config = AppConfig("config.json")
client = O1Client(config.get("o1", "endpoint"))
rapp = RApp(config, client)
summary = rapp.run(stop_after_hours=336)
```
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime
from queue import Empty, Queue
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

import Estimator
import Series
from Config import AppConfig, log_event
from EstimatorType import EstimatorConfig, InsufficientHistoryError, Predictor
from O1Client import O1Client, O1ConnectionError, O1NackError, O1TimeoutError
from O1Type import AllocationPayload, MsgType, O1Message, iso_utc
from RAppType import Decision, MonitoringStore, PolicyConfig, StoreRejection
from SeriesType import HOUR, QuantileForecast, SampleForecast, TimeSeries, as_utc


class ActuationError(RuntimeError):
    """再送しても割り当てが確認されなかった"""


# ----------
# ---モニタリング
# ----------
class MonitoringSystem:
    """需要レポートをストアに追記する"""

    def __init__(self, store: MonitoringStore, logger: Optional[logging.Logger] = None):
        self.store = store
        self.logger = logger or logging.getLogger("RApp.Monitor")

    def ingest(self, msg: O1Message) -> int:
        """レポート1件を追記し、追記後の長さを返す

        Raises:
            StoreRejection: 重複・逆行・欠落したタイムスタンプ
            ValueError: 需要レポート以外のメッセージ
        """
        if msg.msg_type != MsgType.PRB_HISTORY_REPORT:
            raise ValueError(f"需要レポートではありません: {msg.msg_type.value}")
        timestamp = as_utc(datetime.fromisoformat(msg.timestamp))
        try:
            length = self.store.append(msg.tenant_id, timestamp, msg.payload.demand)
        except StoreRejection as e:
            log_event(
                self.logger, "reject", f"レポートを破棄しました: {e}", logging.WARNING,
                tenant_id=msg.tenant_id, timestamp=msg.timestamp,
            )
            raise
        log_event(
            self.logger, "ingest", f"レポートを追記しました: {msg.tenant_id} {msg.timestamp}",
            tenant_id=msg.tenant_id, timestamp=msg.timestamp, demand=msg.payload.demand, length=length,
        )
        return length


# ----------
# ---分析
# ----------
@dataclass(frozen=True)
class AnalyticsResult:
    """分析1回分の結果（predictor, quantiles の順にアンパックできる）"""

    tenant_id: str
    predictor: Predictor
    quantiles: QuantileForecast
    fingerprint: str
    train_seconds: float
    predict_seconds: float
    holdout_mse: Optional[float]

    def __iter__(self) -> Iterator[Any]:
        return iter((self.predictor, self.quantiles))


def required_history(cfg: EstimatorConfig, train_fraction: float) -> int:
    """分析に必要な最小の履歴長（訓練区間でも窓が1つ作れる長さ）"""
    span = cfg.context_length + cfg.horizon
    return max(span + 1, int(np.ceil(span / train_fraction)))


class AnalyticalEngine:
    """前処理・分割・学習・予測"""

    def __init__(
        self,
        store: MonitoringStore,
        train_fraction: float = 0.8,
        seed: int = 42,
        logger: Optional[logging.Logger] = None,
    ):
        self.store = store
        self.train_fraction = train_fraction
        self.seed = seed
        self.logger = logger or logging.getLogger("RApp.Analytics")

    def run_analytics(
        self, tenant_id: str, cfg: EstimatorConfig, history: Optional[TimeSeries] = None
    ) -> AnalyticsResult:
        """履歴で学習し、直後 horizon 時間の分位点を返す

        history を省くとストアの最新スナップショットを使う。

        Raises:
            InsufficientHistoryError: 履歴が required_history より短い場合
        """
        if history is None:
            history = self.store.snapshot(tenant_id)
        need = required_history(cfg, self.train_fraction)
        if len(history) < need:
            raise InsufficientHistoryError(f"{tenant_id}: 履歴が足りません: {len(history)} < {need}")

        train, test = Series.split_train_test(history, self.train_fraction)
        predictor = Estimator.train(train, cfg)
        holdout_mse = None
        if len(test) >= cfg.horizon:
            holdout_mse = Estimator.evaluate(predictor, test, cfg, history=train, seed=self.seed).mse

        began = time.perf_counter()
        forecast = Estimator.predict(predictor, history, self._predict_seed(history.end))
        predict_seconds = time.perf_counter() - began
        if forecast.num_samples < 2:
            # 決定論モデルは全パーセンタイルが同じ値になる
            forecast = SampleForecast(forecast.start, np.repeat(forecast.samples, 2, axis=0))
        quantiles = Series.to_quantiles(forecast)

        result = AnalyticsResult(
            tenant_id,
            predictor,
            quantiles,
            Estimator.fingerprint(predictor),
            predictor.meta.train_seconds,
            predict_seconds,
            holdout_mse,
        )
        log_event(
            self.logger, "analytics", f"分析が完了しました: {tenant_id}",
            tenant_id=tenant_id, kind=cfg.kind, history=len(history), forecast_start=iso_utc(quantiles.start),
            train_seconds=result.train_seconds, predict_seconds=predict_seconds, holdout_mse=holdout_mse,
            fingerprint=result.fingerprint,
        )
        return result

    def _predict_seed(self, last: datetime) -> int:
        return self.seed + int(last.timestamp()) // 3600


# ----------
# ---決定
# ----------
def allocate(quantiles: QuantileForecast, policy: PolicyConfig) -> Tuple[int, ...]:
    """ポリシーのパーセンタイル行を丸めて [min_prbs, max_prbs] に収める"""
    row = quantiles.level(policy.effective_level())
    if policy.rounding == "ceil":
        rounded = np.ceil(row)
    elif policy.rounding == "floor":
        rounded = np.floor(row)
    else:
        rounded = np.floor(row + 0.5)
    clamped = np.clip(rounded, policy.min_prbs, policy.max_prbs)
    return tuple(int(v) for v in clamped)


def decide(
    quantiles: QuantileForecast,
    policy: PolicyConfig,
    tenant_id: str = "",
    model_kind: str = "",
    fingerprint: str = "",
) -> Decision:
    return Decision(
        tenant_id=tenant_id,
        forecast_start=quantiles.start,
        allocations=allocate(quantiles, policy),
        model_kind=model_kind,
        quantile_level=policy.effective_level(),
        predictor_fingerprint=fingerprint,
    )


class DecisionEngine:
    """分析結果を割り当て決定に変える"""

    def __init__(self, policy: PolicyConfig, logger: Optional[logging.Logger] = None):
        self.policy = policy
        self.logger = logger or logging.getLogger("RApp.Decision")

    def decide(self, result: AnalyticsResult) -> Decision:
        decision = replace(
            decide(result.quantiles, self.policy, result.tenant_id, result.predictor.kind, result.fingerprint),
            train_seconds=result.train_seconds,
            predict_seconds=result.predict_seconds,
            holdout_mse=result.holdout_mse,
        )
        log_event(
            self.logger, "decide", f"割り当てを決定しました: {decision.tenant_id} {iso_utc(decision.forecast_start)}",
            **decision.to_dict(),
        )
        return decision


# ----------
# ---アクチュエーター
# ----------
def allocation_message(decision: Decision) -> O1Message:
    """決定を PRB_ALLOCATION メッセージにする（msg_id は決定IDから作るので再送でも同じ）"""
    start = iso_utc(decision.forecast_start)
    return O1Message(
        msg_type=MsgType.PRB_ALLOCATION,
        msg_id=decision.msg_id,
        tenant_id=decision.tenant_id,
        timestamp=start,
        payload=AllocationPayload(start, decision.allocations, decision.decision_id),
    )


class Actuator:
    """割り当てをO-DUに送る"""

    def __init__(
        self,
        client: O1Client,
        attempts: int = 3,
        backoff: float = 0.2,
        ack_timeout: float = 2.0,
        logger: Optional[logging.Logger] = None,
    ):
        self.client = client
        self.attempts = max(1, attempts)
        self.backoff = backoff
        self.ack_timeout = ack_timeout
        self.logger = logger or logging.getLogger("RApp.Actuator")
        self.acknowledged: set = set()

    def actuate(self, decision: Decision) -> O1Message:
        """割り当てを送ってACKを待つ。失敗したら指数バックオフで再送する

        確認済みの決定IDは送り直さない。

        Raises:
            ActuationError: attempts 回すべて失敗した場合
        """
        msg = allocation_message(decision)
        if decision.decision_id in self.acknowledged:
            log_event(self.logger, "actuate_skip", "確認済みの割り当てです", decision_id=decision.decision_id)
            return msg

        last_error: Optional[Exception] = None
        for attempt in range(self.attempts):
            try:
                self.client.send_allocation(msg, self.ack_timeout)
            except (O1ConnectionError, O1TimeoutError, O1NackError) as e:
                last_error = e
                log_event(
                    self.logger, "actuate_retry", f"割り当ての送信に失敗しました ({attempt + 1}/{self.attempts}): {e}",
                    logging.WARNING, decision_id=decision.decision_id, attempt=attempt + 1,
                )
                if attempt + 1 < self.attempts:
                    time.sleep(self.backoff * (2**attempt))
                continue
            self.acknowledged.add(decision.decision_id)
            log_event(
                self.logger, "actuate", f"割り当てが確認されました: {decision.tenant_id}",
                tenant_id=decision.tenant_id, decision_id=decision.decision_id, attempts=attempt + 1,
            )
            return msg
        raise ActuationError(f"{decision.tenant_id}: 割り当てを確認できませんでした: {last_error}")


# ----------
# ---パイプライン
# ----------
_STOP = object()


class RApp:
    """キューでつないだ4段のパイプライン

    run() の中では、受信ループが需要レポートを受信キューに入れ、モニタリング・分析・決定・
    アクチュエーターの各段がそれぞれ1本のワーカースレッドとして自分のキューを上流から順に
    処理する。学習やACK待ちが長引いても受信は止まらない。
    """

    def __init__(
        self,
        config: AppConfig,
        client: O1Client,
        logger: Optional[logging.Logger] = None,
        shutdown_event: Optional[threading.Event] = None,
    ):
        self.logger = logger or logging.getLogger("RApp")
        self.client = client
        self.shutdown_event = shutdown_event or threading.Event()

        self.model_config = EstimatorConfig.from_dict(config.section("model"))
        self.policy = PolicyConfig.from_dict(config.section("policy"))
        self.cadence = int(config.get("rapp", "cadence_hours", 24))
        self.train_fraction = float(config.get("rapp", "train_fraction", 0.8))
        self.idle_timeout = float(config.get("rapp", "idle_timeout", 30.0))
        self.stop_after_hours = config.get("rapp", "stop_after_hours")
        self.loop_interval = float(config.get("system", "loop_interval", 0.05))
        self.shutdown_timeout = float(config.get("system", "shutdown_timeout", 5.0))
        queue_size = int(config.get("rapp", "queue_size", 1024))
        if self.cadence < 1:
            raise ValueError(f"cadence_hours は正である必要があります: {self.cadence}")
        if queue_size < 1:
            raise ValueError(f"queue_size は正である必要があります: {queue_size}")

        self.store = MonitoringStore(int(config.get("rapp", "retention_hours", 3360)))
        self.monitor = MonitoringSystem(self.store, self.logger.getChild("Monitor"))
        self.analytics = AnalyticalEngine(
            self.store,
            self.train_fraction,
            int(config.get("rapp", "seed", 42)),
            self.logger.getChild("Analytics"),
        )
        self.decision_engine = DecisionEngine(self.policy, self.logger.getChild("Decision"))
        self.actuator = Actuator(
            client,
            int(config.get("rapp", "actuate_attempts", 3)),
            float(config.get("rapp", "actuate_backoff", 0.2)),
            float(config.get("o1", "ack_timeout", 2.0)),
            self.logger.getChild("Actuator"),
        )
        workers = int(config.get("rapp", "analytics_workers", 1))
        self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="analytics") if workers > 1 else None

        self._inbox: "Queue[O1Message]" = Queue(maxsize=queue_size)
        self._analytics_queue: "Queue[Tuple[str, TimeSeries]]" = Queue(maxsize=queue_size)
        self._decision_queue: "Queue[AnalyticsResult]" = Queue(maxsize=queue_size)
        self._actuation_queue: "Queue[Decision]" = Queue(maxsize=queue_size)
        self._last_trigger: Dict[str, datetime] = {}
        self._stop_after: Optional[int] = None
        self._target_reached = threading.Event()
        self._lock = threading.Lock()
        self._workers: List[threading.Thread] = []

        self.accepted: Dict[str, int] = {}
        self.rejected = 0
        self.decisions: List[Decision] = []
        self.actuated: List[str] = []
        self.errors: List[Dict[str, Any]] = []

    # ----------
    # ---各段の処理
    # ----------
    def submit(self, msg: O1Message) -> None:
        self._inbox.put(msg)

    @staticmethod
    def _drain(queue: Queue) -> list:
        items = []
        while True:
            try:
                items.append(queue.get_nowait())
            except Empty:
                return items

    def _error(self, stage: str, tenant_id: str, error: Exception) -> None:
        with self._lock:
            self.errors.append({"stage": stage, "tenant_id": tenant_id, "error": str(error)})
        log_event(
            self.logger, "pipeline_error", f"{stage} でエラーが発生しました: {error}", logging.ERROR,
            stage=stage, tenant_id=tenant_id,
        )

    def _monitor_items(self, messages: List[O1Message]) -> None:
        for msg in messages:
            if self._target_reached.is_set():
                return
            try:
                self.monitor.ingest(msg)
            except StoreRejection:
                self.rejected += 1
                continue
            self.accepted[msg.tenant_id] = self.accepted.get(msg.tenant_id, 0) + 1
            if self._due(msg.tenant_id):
                self._analytics_queue.put((msg.tenant_id, self.store.snapshot(msg.tenant_id)))
            if self._stop_after and all(count >= self._stop_after for count in self.accepted.values()):
                self._target_reached.set()

    def _due(self, tenant_id: str) -> bool:
        if self.store.length(tenant_id) < required_history(self.model_config, self.train_fraction):
            return False
        last = self.store.last_timestamp(tenant_id)
        previous = self._last_trigger.get(tenant_id)
        if previous is not None and last - previous < self.cadence * HOUR:
            return False
        self._last_trigger[tenant_id] = last
        return True

    def _analyze_items(self, requests: List[Tuple[str, TimeSeries]]) -> None:
        def run(request: Tuple[str, TimeSeries]):
            tenant_id, history = request
            try:
                return self.analytics.run_analytics(tenant_id, self.model_config, history)
            except Exception as e:
                return e

        if self._executor is not None and len(requests) > 1:
            outcomes = list(self._executor.map(run, requests))
        else:
            outcomes = [run(request) for request in requests]
        for (tenant_id, _), outcome in zip(requests, outcomes):
            if isinstance(outcome, Exception):
                self._error("analytics", tenant_id, outcome)
            else:
                self._decision_queue.put(outcome)

    def _decide_items(self, results: List[AnalyticsResult]) -> None:
        for result in results:
            decision = self.decision_engine.decide(result)
            with self._lock:
                self.decisions.append(decision)
            self._actuation_queue.put(decision)

    def _actuate_items(self, decisions: List[Decision]) -> None:
        for decision in decisions:
            try:
                self.actuator.actuate(decision)
            except ActuationError as e:
                self._error("actuate", decision.tenant_id, e)
                continue
            with self._lock:
                self.actuated.append(decision.decision_id)

    def step(self) -> None:
        """ワーカーを起動せずに、キューに溜まったものを呼び出し元のスレッドで上流から順に処理する"""
        self._monitor_items(self._drain(self._inbox))
        self._analyze_items(self._drain(self._analytics_queue))
        self._decide_items(self._drain(self._decision_queue))
        self._actuate_items(self._drain(self._actuation_queue))

    # ----------
    # ---ワーカースレッド
    # ----------
    def _stage_worker(self, stage: str, source: Queue, sink: Optional[Queue], process, batch: bool = False) -> None:
        """source が空なら待ち、届いた順に process へ渡す。終了印を受けたら sink に送って終わる

        batch なら、その時点で溜まっている分をまとめて渡す。停止要求の後は処理せず読み捨てる。
        """
        while True:
            items = [source.get()]
            if batch:
                items += self._drain(source)
            stopping = items[-1] is _STOP
            if stopping:
                items.pop()
            if items and not self.shutdown_event.is_set():
                try:
                    process(items)
                except Exception as e:
                    self._error(stage, "", e)
            if stopping:
                break
        if sink is not None:
            sink.put(_STOP)
        self.logger.debug(f"{stage} ワーカーを終了しました")

    def _start_workers(self) -> None:
        stages = [
            ("monitor", self._inbox, self._analytics_queue, self._monitor_items, False),
            ("analytics", self._analytics_queue, self._decision_queue, self._analyze_items, True),
            ("decision", self._decision_queue, self._actuation_queue, self._decide_items, False),
            ("actuate", self._actuation_queue, None, self._actuate_items, False),
        ]
        self._workers = [
            threading.Thread(target=self._stage_worker, args=stage, name=f"rapp-{stage[0]}", daemon=True)
            for stage in stages
        ]
        for worker in self._workers:
            worker.start()

    def _stop_workers(self) -> None:
        """終了印を流し、各段が手元の仕事を終えるまで待つ（停止要求があれば shutdown_timeout まで）"""
        self._inbox.put(_STOP)
        timeout = self.shutdown_timeout if self.shutdown_event.is_set() else None
        for worker in self._workers:
            worker.join(timeout)
            if worker.is_alive():
                self.logger.warning(f"{worker.name} が時間内に終了しませんでした")
        self._workers = []

    # ----------
    # ---メインループ
    # ----------
    def run(self, stop_after_hours: Optional[int] = None) -> Dict[str, Any]:
        """レポートを受けてパイプラインを回す

        全テナントが stop_after_hours 件のレポートを受け入れた時点、レポートが
        idle_timeout 秒途切れた時点、または shutdown_event で受信を終え、
        各段が残りを処理し終えてから summary を返す。

        Raises:
            O1ConnectionError: O-DUに接続できない場合
        """
        stop_after_hours = stop_after_hours or self.stop_after_hours
        self._stop_after = int(stop_after_hours) if stop_after_hours else None
        self._target_reached.clear()
        if not self.client.is_open:
            self.client.connect()
        log_event(
            self.logger, "rapp_start", "rAppを開始しました",
            kind=self.model_config.kind, policy=self.policy.mode, level=self.policy.effective_level(),
            cadence_hours=self.cadence, stop_after_hours=stop_after_hours,
        )
        self._start_workers()
        idle_since = time.monotonic()
        try:
            while not self.shutdown_event.is_set() and not self._target_reached.is_set():
                msg = self.client.next_message(self.loop_interval)
                if msg is None:
                    if time.monotonic() - idle_since >= self.idle_timeout:
                        log_event(self.logger, "rapp_idle", f"{self.idle_timeout} 秒レポートがありません")
                        break
                    continue
                idle_since = time.monotonic()
                if msg.msg_type == MsgType.PRB_HISTORY_REPORT:
                    self._inbox.put(msg)
        finally:
            self._stop_workers()
            self.close()
        summary = self.summary()
        log_event(self.logger, "rapp_stop", "rAppを停止しました", **summary)
        return summary

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        self.client.disconnect()

    def summary(self) -> Dict[str, Any]:
        return {
            "tenants": sorted(self.accepted.keys()),
            "accepted": dict(self.accepted),
            "rejected": self.rejected,
            "decisions": len(self.decisions),
            "actuated": len(self.actuated),
            "errors": list(self.errors),
            "reconnects": self.client.reconnects,
        }
