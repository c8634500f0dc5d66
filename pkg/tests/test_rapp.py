"""rAppの各段（モニタリング・分析・決定・アクチュエーター）とパイプラインのテスト"""

import threading
import time
from collections import deque
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

import RApp
import Series
from Config import AppConfig
from EstimatorType import EstimatorConfig, InsufficientHistoryError
from O1Client import O1Client, O1ConnectionError
from O1Type import AckPayload, HistoryPayload, MsgType, O1Message, iso_utc
from OduServer import OduServer
from RAppType import Decision, MonitoringStore, PolicyConfig, StoreRejection
from SeriesType import HOUR, QuantileForecast, SampleForecast
from TrafficType import ScenarioConfig, TenantProfile
from helpers import START, sinusoid


TINY_MODEL = {"kind": "sff", "epochs": 1, "hidden_dims": [8, 8], "num_eval_samples": 20, "seed": 7}


def report(tenant_id: str, hour: int, value: float) -> O1Message:
    return O1Message(MsgType.PRB_HISTORY_REPORT, hour, tenant_id, iso_utc(START + hour * HOUR), HistoryPayload(float(value)))


def flat_quantiles(value: float, horizon: int = 24) -> QuantileForecast:
    return QuantileForecast(START, np.full((99, horizon), value))


def rapp_config(**rapp) -> AppConfig:
    return AppConfig.from_dict({"model": TINY_MODEL, "rapp": rapp})


class StubClient:
    """常にACKを返す（fail 回までは例外を投げる）クライアント"""

    def __init__(self, fail: int = 0, error=O1ConnectionError):
        self.fail = fail
        self.error = error
        self.sent = []
        self.reconnects = 0
        self.is_open = True

    def send_allocation(self, msg, timeout=2.0):
        self.sent.append(msg)
        if len(self.sent) <= self.fail:
            raise self.error("O-DUに届きません")
        return O1Message(MsgType.ACK, msg.msg_id, msg.tenant_id, msg.timestamp, AckPayload(msg.msg_id))

    def disconnect(self):
        self.is_open = False


class ScriptedClient(StubClient):
    """用意したレポートを順に返し、尽きたら何も返さないクライアント"""

    def __init__(self, messages):
        super().__init__()
        self.messages = deque(messages)

    def next_message(self, timeout):
        if self.messages:
            return self.messages.popleft()
        time.sleep(timeout)
        return None


# ----------
# ---モニタリングストア
# ----------
class TestMonitoringStore:
    def test_append_returns_length(self):
        store = MonitoringStore()
        assert [store.append("a", START + i * HOUR, 1.0) for i in range(3)] == [1, 2, 3]
        assert store.last_timestamp("a") == START + 2 * HOUR

    def test_duplicate_is_rejected_without_change(self):
        store = MonitoringStore()
        store.append("a", START, 1.0)
        store.append("a", START + HOUR, 2.0)
        with pytest.raises(StoreRejection):
            store.append("a", START + HOUR, 9.0)
        with pytest.raises(StoreRejection):
            store.append("a", START, 9.0)
        assert store.snapshot("a").values.tolist() == [1.0, 2.0]

    def test_gap_is_rejected(self):
        store = MonitoringStore()
        store.append("a", START, 1.0)
        with pytest.raises(StoreRejection):
            store.append("a", START + 2 * HOUR, 1.0)
        assert store.length("a") == 1

    def test_retention(self):
        store = MonitoringStore(retention_hours=5)
        for i in range(8):
            store.append("a", START + i * HOUR, float(i))
        series = store.snapshot("a")
        assert series.values.tolist() == [3.0, 4.0, 5.0, 6.0, 7.0]
        assert series.start == START + 3 * HOUR

    def test_tenants_are_independent(self):
        store = MonitoringStore()
        store.append("a", START, 1.0)
        store.append("b", START + 5 * HOUR, 2.0)
        assert sorted(store.tenants()) == ["a", "b"]
        assert store.length("c") == 0
        assert store.last_timestamp("c") is None
        with pytest.raises(KeyError):
            store.snapshot("c")

    def test_week_of_reports_in_order(self):
        store = MonitoringStore()
        for i in range(336):
            store.append("a", START + i * HOUR, float(i % 24))
        series = store.snapshot("a")
        assert len(series) == 336
        assert series.end == START + 335 * HOUR

    def test_snapshot_is_a_copy(self):
        store = MonitoringStore()
        store.append("a", START, 1.0)
        snapshot = store.snapshot("a")
        store.append("a", START + HOUR, 2.0)
        assert len(snapshot) == 1


class TestMonitoringSystem:
    def test_ingest(self):
        monitor = RApp.MonitoringSystem(MonitoringStore())
        assert monitor.ingest(report("a", 0, 3.0)) == 1
        assert monitor.ingest(report("a", 1, 4.0)) == 2

    def test_duplicate_report(self):
        monitor = RApp.MonitoringSystem(MonitoringStore())
        monitor.ingest(report("a", 0, 3.0))
        with pytest.raises(StoreRejection):
            monitor.ingest(report("a", 0, 3.0))

    def test_non_report(self):
        ack = O1Message(MsgType.ACK, 1, "a", iso_utc(START), AckPayload(1))
        with pytest.raises(ValueError):
            RApp.MonitoringSystem(MonitoringStore()).ingest(ack)


# ----------
# ---決定ポリシー
# ----------
class TestPolicy:
    def test_flat_forecast(self):
        assert RApp.allocate(flat_quantiles(10.0), PolicyConfig()) == (10,) * 24

    @pytest.mark.parametrize(
        "rounding, value, expected",
        [("ceil", 10.2, 11), ("floor", 10.8, 10), ("round", 10.2, 10), ("round", 10.5, 11), ("round", 2.5, 3)],
    )
    def test_rounding(self, rounding, value, expected):
        assert RApp.allocate(flat_quantiles(value), PolicyConfig(rounding=rounding))[0] == expected

    def test_clamped_to_bounds(self):
        assert RApp.allocate(flat_quantiles(250.0), PolicyConfig(max_prbs=100)) == (100,) * 24
        assert RApp.allocate(flat_quantiles(0.0), PolicyConfig(min_prbs=5)) == (5,) * 24

    def test_uses_the_policy_level(self):
        values = np.tile(np.arange(1.0, 100.0)[:, None], (1, 24))
        quantiles = QuantileForecast(START, values)
        assert RApp.allocate(quantiles, PolicyConfig(quantile_level=90))[0] == 90
        assert RApp.allocate(quantiles, PolicyConfig(quantile_level=10))[0] == 10

    def test_monotone_in_level(self):
        rng = np.random.default_rng(1)
        quantiles = Series.to_quantiles(SampleForecast(START, rng.gamma(3.0, 10.0, size=(200, 24))))
        previous = None
        for level in (10, 50, 75, 90, 99):
            allocation = np.array(RApp.allocate(quantiles, PolicyConfig(quantile_level=level)))
            if previous is not None:
                assert np.all(allocation >= previous)
            previous = allocation

    @pytest.mark.parametrize(
        "under, over, level", [(9.0, 1.0, 90), (1.0, 1.0, 50), (3.0, 1.0, 75), (1000.0, 1.0, 99), (1.0, 1000.0, 1)]
    )
    def test_cost_mode_level(self, under, over, level):
        assert PolicyConfig(mode="cost", cost_under=under, cost_over=over).effective_level() == level

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"quantile_level": 0},
            {"quantile_level": 100},
            {"rounding": "nearest"},
            {"mode": "greedy"},
            {"min_prbs": 10, "max_prbs": 5},
            {"cost_under": 0.0},
        ],
    )
    def test_invalid_policy(self, kwargs):
        with pytest.raises(ValueError):
            PolicyConfig(**kwargs)

    def test_from_dict(self):
        policy = PolicyConfig.from_dict({"mode": "cost", "cost_under": 4.0, "comment": "x"})
        assert policy.effective_level() == 80


class TestDecision:
    def _decision(self, **changes) -> Decision:
        decision = RApp.decide(flat_quantiles(12.3), PolicyConfig(), "a", "sff", "00ff")
        return replace(decision, **changes)

    def test_fields(self):
        decision = self._decision()
        assert decision.allocations == (13,) * 24
        assert decision.forecast_start == START
        assert decision.quantile_level == 90

    def test_id_ignores_timings(self):
        assert self._decision(train_seconds=1.5, holdout_mse=3.0) == self._decision()
        assert self._decision(predict_seconds=0.2).decision_id == self._decision().decision_id

    def test_id_tracks_content(self):
        assert self._decision(allocations=(14,) * 24).decision_id != self._decision().decision_id
        assert self._decision(tenant_id="b").decision_id != self._decision().decision_id

    def test_msg_id_is_u64(self):
        decision = self._decision()
        assert len(decision.decision_id) == 16
        assert decision.msg_id == int(decision.decision_id, 16)
        assert 0 <= decision.msg_id < 2**64

    def test_allocation_message(self):
        decision = self._decision()
        msg = RApp.allocation_message(decision)
        assert msg.msg_type == MsgType.PRB_ALLOCATION
        assert msg.msg_id == decision.msg_id
        assert msg.payload.prbs == decision.allocations
        assert msg.payload.decision_id == decision.decision_id
        assert msg.payload.forecast_start == "2024-01-01T00:00:00+00:00"


# ----------
# ---分析
# ----------
def filled_store(values, tenant_id="a") -> MonitoringStore:
    store = MonitoringStore()
    for i, value in enumerate(values):
        store.append(tenant_id, START + i * HOUR, value)
    return store


class TestAnalyticalEngine:
    def test_required_history(self):
        assert RApp.required_history(EstimatorConfig(), 0.8) == 60
        assert RApp.required_history(EstimatorConfig(), 0.5) == 96

    @pytest.mark.parametrize("length", [47, 59])
    def test_insufficient_history(self, length, tiny_config):
        engine = RApp.AnalyticalEngine(filled_store(np.full(length, 5.0)))
        with pytest.raises(InsufficientHistoryError):
            engine.run_analytics("a", tiny_config)

    def test_constant_tenant(self, tiny_config):
        engine = RApp.AnalyticalEngine(filled_store(np.full(120, 50.0)))
        result = engine.run_analytics("a", tiny_config)
        assert np.all(np.abs(result.quantiles.level(50) - 50.0) <= 5.0)
        assert result.quantiles.start == START + 120 * HOUR
        assert result.holdout_mse is not None

    def test_same_inputs_same_result(self, tiny_config):
        values = sinusoid(96, noise=2.0, seed=4)
        first = RApp.AnalyticalEngine(filled_store(values), seed=3).run_analytics("a", tiny_config)
        second = RApp.AnalyticalEngine(filled_store(values), seed=3).run_analytics("a", tiny_config)
        assert first.fingerprint == second.fingerprint
        assert np.array_equal(first.quantiles.values, second.quantiles.values)

    def test_unpacks_to_predictor_and_quantiles(self, tiny_config):
        result = RApp.AnalyticalEngine(filled_store(sinusoid(72))).run_analytics("a", tiny_config)
        predictor, quantiles = result
        assert predictor.kind == "sff"
        assert quantiles.horizon == 24

    def test_lstm_quantiles_are_flat(self, tiny_config):
        cfg = replace(tiny_config, kind="lstm")
        result = RApp.AnalyticalEngine(filled_store(sinusoid(72))).run_analytics("a", cfg)
        assert np.all(result.quantiles.values == result.quantiles.values[0])

    def test_decision_engine_carries_timings(self, tiny_config):
        result = RApp.AnalyticalEngine(filled_store(sinusoid(72))).run_analytics("a", tiny_config)
        decision = RApp.DecisionEngine(PolicyConfig()).decide(result)
        assert decision.model_kind == "sff"
        assert decision.predictor_fingerprint == result.fingerprint
        assert decision.train_seconds == result.train_seconds
        assert decision.to_dict()["decision_id"] == decision.decision_id


# ----------
# ---アクチュエーター
# ----------
def a_decision(tenant_id="a") -> Decision:
    return RApp.decide(flat_quantiles(20.0), PolicyConfig(), tenant_id, "sff", "abcd")


class TestActuator:
    def test_retries_then_fails(self):
        client = StubClient(fail=10)
        actuator = RApp.Actuator(client, attempts=3, backoff=0.001)
        with pytest.raises(RApp.ActuationError):
            actuator.actuate(a_decision())
        assert len(client.sent) == 3
        assert actuator.acknowledged == set()

    def test_retry_keeps_msg_id(self):
        client = StubClient(fail=1)
        decision = a_decision()
        RApp.Actuator(client, attempts=3, backoff=0.001).actuate(decision)
        assert [m.msg_id for m in client.sent] == [decision.msg_id] * 2

    def test_acknowledged_decision_is_not_resent(self):
        client = StubClient()
        actuator = RApp.Actuator(client)
        actuator.actuate(a_decision())
        actuator.actuate(a_decision())
        assert len(client.sent) == 1

    def test_live_odu(self):
        scenario = ScenarioConfig((("a", TenantProfile()),), weeks=1)
        server = OduServer(scenario, "127.0.0.1:0", speedup=1.0)
        host, port = server.start()
        client = O1Client(f"{host}:{port}")
        try:
            RApp.Actuator(client).actuate(a_decision())
        finally:
            client.disconnect()
            server.shutdown()
        records = server.state.snapshot()
        assert len(records) == 1
        assert records[0].prbs == (20,) * 24
        assert records[0].decision_id == a_decision().decision_id

    def test_delayed_ack_is_recorded_once(self):
        scenario = ScenarioConfig((("a", TenantProfile()),), weeks=1)
        server = OduServer(scenario, "127.0.0.1:0", speedup=1.0, ack_delays=[0.4])
        host, port = server.start()
        client = O1Client(f"{host}:{port}")
        try:
            RApp.Actuator(client, attempts=3, backoff=0.05, ack_timeout=0.25).actuate(a_decision())
        finally:
            client.disconnect()
            server.shutdown()
        assert len(server.state.snapshot()) == 1

    def test_odu_down(self):
        client = O1Client("127.0.0.1:1", connect_attempts=1, reconnect_backoff=0.001)
        with pytest.raises(RApp.ActuationError):
            RApp.Actuator(client, attempts=3, backoff=0.001).actuate(a_decision())


# ----------
# ---パイプライン
# ----------
class TestPipeline:
    def _feed(self, rapp, values, tenant_id="a", first=0):
        for hour, value in enumerate(values[first:], start=first):
            rapp.submit(report(tenant_id, hour, value))
            rapp.step()

    def test_not_enough_history(self):
        rapp = RApp.RApp(rapp_config(), StubClient())
        self._feed(rapp, np.full(47, 30.0))
        assert rapp.decisions == []
        assert rapp.errors == []
        assert rapp.accepted == {"a": 47}

    def test_cadence(self):
        client = StubClient()
        rapp = RApp.RApp(rapp_config(), client)
        self._feed(rapp, sinusoid(108, noise=1.0))
        # 60, 84, 108 点目で分析する
        assert len(rapp.decisions) == 3
        starts = [d.forecast_start for d in rapp.decisions]
        assert starts == [START + 60 * HOUR, START + 84 * HOUR, START + 108 * HOUR]
        assert len(client.sent) == 3
        assert rapp.actuated == [d.decision_id for d in rapp.decisions]

    def test_same_reports_same_decisions(self):
        values = sinusoid(84, noise=1.0, seed=2)
        first = RApp.RApp(rapp_config(), StubClient())
        second = RApp.RApp(rapp_config(), StubClient())
        self._feed(first, values)
        self._feed(second, values)
        assert first.decisions == second.decisions
        assert [d.decision_id for d in first.decisions] == [d.decision_id for d in second.decisions]

    def test_replayed_reports_are_not_ingested_twice(self):
        values = sinusoid(70)
        rapp = RApp.RApp(rapp_config(), StubClient())
        self._feed(rapp, values)
        # 再接続後にO-DUが最初から配信し直す
        self._feed(rapp, values)
        assert rapp.accepted == {"a": 70}
        assert rapp.rejected == 70
        assert rapp.store.length("a") == 70
        assert len(rapp.decisions) == 1

    def test_actuation_failure_is_recorded(self):
        rapp = RApp.RApp(rapp_config(actuate_attempts=2, actuate_backoff=0.001), StubClient(fail=100))
        self._feed(rapp, sinusoid(60))
        assert len(rapp.decisions) == 1
        assert rapp.actuated == []
        assert rapp.errors[0]["stage"] == "actuate"

    def test_parallel_analytics_keeps_order(self):
        rapp = RApp.RApp(rapp_config(analytics_workers=2), StubClient())
        values = sinusoid(60)
        for hour in range(60):
            for tenant_id in ("a", "b", "c"):
                rapp.submit(report(tenant_id, hour, values[hour]))
        rapp.step()
        rapp.close()
        assert [d.tenant_id for d in rapp.decisions] == ["a", "b", "c"]

    def test_invalid_cadence(self):
        with pytest.raises(ValueError):
            RApp.RApp(rapp_config(cadence_hours=0), StubClient())

    def test_end_to_end(self, tmp_path):
        scenario = ScenarioConfig(
            (("embb-0", TenantProfile()), ("urllc-0", TenantProfile(base_load=20.0, ar_coefficient=0.8))), weeks=1, seed=42
        )
        server = OduServer(scenario, "127.0.0.1:0", speedup=720000.0, allocation_log=tmp_path / "allocations.csv")
        host, port = server.start()
        config = rapp_config(idle_timeout=5.0, analytics_workers=2)
        client = O1Client(f"{host}:{port}")
        try:
            summary = RApp.RApp(config, client).run(stop_after_hours=168)
        finally:
            server.shutdown()

        assert summary["tenants"] == ["embb-0", "urllc-0"]
        assert summary["accepted"] == {"embb-0": 168, "urllc-0": 168}
        assert summary["errors"] == []
        # 60, 84, 108, 132, 156 点目 × 2テナント
        assert summary["decisions"] == 10
        assert summary["actuated"] == 10
        assert len(server.state.snapshot()) == 10
        lines = (tmp_path / "allocations.csv").read_text().splitlines()
        assert len(lines) == 1 + 10 * 24

    def test_run_matches_step(self):
        values = sinusoid(108, noise=1.0, seed=6)
        stepped = RApp.RApp(rapp_config(), StubClient())
        self._feed(stepped, values)

        client = ScriptedClient(report("a", hour, value) for hour, value in enumerate(values))
        threaded = RApp.RApp(rapp_config(idle_timeout=1.0), client)
        summary = threaded.run(stop_after_hours=108)

        assert summary["accepted"] == {"a": 108}
        assert threaded.decisions == stepped.decisions
        assert [m.msg_id for m in client.sent] == [d.msg_id for d in stepped.decisions]

    def test_reports_keep_flowing_while_analytics_runs(self):
        values = sinusoid(100)
        rapp = RApp.RApp(rapp_config(idle_timeout=1.0), ScriptedClient(report("a", h, v) for h, v in enumerate(values)))
        original = rapp.analytics.run_analytics
        seen_during_analytics = []

        def slow_analytics(tenant_id, cfg, history=None):
            deadline = time.monotonic() + 5.0
            while rapp.accepted.get(tenant_id, 0) < 100 and time.monotonic() < deadline:
                time.sleep(0.01)
            seen_during_analytics.append(rapp.accepted.get(tenant_id, 0))
            return original(tenant_id, cfg, history)

        rapp.analytics.run_analytics = slow_analytics
        summary = rapp.run(stop_after_hours=100)

        assert seen_during_analytics[0] == 100
        # 分析は発火した時点の履歴で行う
        assert [d.forecast_start for d in rapp.decisions] == [START + 60 * HOUR, START + 84 * HOUR]
        assert summary["errors"] == []

    def test_invalid_queue_size(self):
        with pytest.raises(ValueError):
            RApp.RApp(rapp_config(queue_size=0), StubClient())

    def test_shutdown_event_stops_the_run(self):
        event = threading.Event()
        rapp = RApp.RApp(rapp_config(idle_timeout=30.0), ScriptedClient([]), shutdown_event=event)
        threading.Timer(0.3, event.set).start()
        began = time.monotonic()
        summary = rapp.run()
        assert time.monotonic() - began < 10.0
        assert summary["decisions"] == 0


# ----------
# ---O-DUの再起動をはさむ通し実行
# ----------
def replay_with_restart(tmp_path, model, speedup, hours=84, restart_after=20):
    """restart_after 件受け入れた時点で模擬O-DUを止め、同じポートで起動し直す"""
    scenario = ScenarioConfig((("embb-0", TenantProfile()),), weeks=1, seed=42)
    first = OduServer(scenario, "127.0.0.1:0", speedup=speedup)
    host, port = first.start()
    log_path = tmp_path / "allocations.csv"
    config = AppConfig.from_dict({"model": model, "rapp": {"idle_timeout": 15.0}})
    rapp = RApp.RApp(config, O1Client(f"{host}:{port}", connect_attempts=20, reconnect_backoff=0.05))

    median = {}
    original = rapp.analytics.run_analytics

    def keep_median(tenant_id, cfg, history=None):
        result = original(tenant_id, cfg, history)
        median[(tenant_id, iso_utc(result.quantiles.start))] = result.quantiles.level(50)
        return result

    rapp.analytics.run_analytics = keep_median
    servers = [first]

    def restart():
        deadline = time.monotonic() + 60.0
        while rapp.accepted.get("embb-0", 0) < restart_after and time.monotonic() < deadline:
            time.sleep(0.005)
        first.shutdown()
        second = OduServer(scenario, f"{host}:{port}", speedup=speedup, allocation_log=log_path)
        second.start()
        servers.append(second)

    restarter = threading.Thread(target=restart, daemon=True)
    restarter.start()
    try:
        summary = rapp.run(stop_after_hours=hours)
    finally:
        restarter.join(timeout=60.0)
        for server in servers:
            server.shutdown()

    log = pd.read_csv(log_path)
    logged = {
        key: group.sort_values("hour_index")["prbs"].tolist()
        for key, group in log.groupby(["tenant_id", "forecast_start"])
    }
    return rapp, summary, logged, median


def check_replay(rapp, summary, logged, median, hours):
    assert len(rapp.store.snapshot("embb-0")) == hours
    assert summary["accepted"] == {"embb-0": hours}
    assert summary["rejected"] > 0
    assert summary["reconnects"] >= 1
    assert summary["errors"] == []

    expected = {(d.tenant_id, iso_utc(d.forecast_start)): list(d.allocations) for d in rapp.decisions}
    assert len(expected) == 2
    assert logged == expected
    for key, prbs in logged.items():
        assert np.all(np.array(prbs) >= np.floor(median[key]))


class TestReplayWithRestart:
    def test_fast_replay(self, tmp_path):
        rapp, summary, logged, median = replay_with_restart(tmp_path, TINY_MODEL, speedup=72000.0)
        check_replay(rapp, summary, logged, median, 84)

    @pytest.mark.slow
    def test_deepar_at_real_speedup(self, tmp_path):
        model = {"kind": "deepar", "epochs": 2, "seed": 42}
        rapp, summary, logged, median = replay_with_restart(tmp_path, model, speedup=3600.0)
        check_replay(rapp, summary, logged, median, 84)
        assert all(d.model_kind == "deepar" and d.quantile_level == 90 for d in rapp.decisions)
