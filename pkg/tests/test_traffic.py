"""合成需要ジェネレーターとシナリオ文書のテスト"""

import json
from pathlib import Path

import numpy as np
import pytest

import Series
import Traffic
from TrafficType import ScenarioConfig, ScenarioError, TenantProfile


class TestGenerate:
    def test_same_seed_same_series(self):
        first = Traffic.generate(TenantProfile(), 336, seed=42)
        second = Traffic.generate(TenantProfile(), 336, seed=42)
        assert np.array_equal(first.values, second.values)

    def test_seed_changes_series(self):
        first = Traffic.generate(TenantProfile(), 336, seed=42)
        second = Traffic.generate(TenantProfile(), 336, seed=43)
        assert not np.array_equal(first.values, second.values)

    def test_non_negative(self):
        profile = TenantProfile(base_load=0.0, daily_amplitude=30.0, noise_sigma=10.0)
        assert np.all(Traffic.generate(profile, 1000, seed=1).values >= 0.0)

    def test_noiseless_profile_is_the_seasonal_curve(self):
        profile = TenantProfile(noise_sigma=0.0, burst_probability=0.0, weekly_amplitude=0.0)
        values = Traffic.generate(profile, 48, seed=0).values
        expected = 50.0 + 20.0 * np.sin(2.0 * np.pi * np.arange(48) / 24.0)
        assert np.allclose(values, expected)

    def test_hours_must_be_positive(self):
        with pytest.raises(ScenarioError):
            Traffic.generate(TenantProfile(), 0, seed=0)

    def test_ar_noise_is_autocorrelated(self):
        profile = TenantProfile(
            base_load=100.0, daily_amplitude=0.0, weekly_amplitude=0.0, burst_probability=0.0, ar_coefficient=0.8
        )
        residual = Traffic.generate(profile, 5000, seed=3).values - 100.0
        lag1 = np.corrcoef(residual[:-1], residual[1:])[0, 1]
        assert lag1 > 0.6

    def test_trend_moves_the_level(self):
        profile = TenantProfile(noise_sigma=0.0, burst_probability=0.0, trend_per_week=7.0)
        values = Traffic.generate(profile, 336, seed=0).values
        assert values[168:].mean() - values[:168].mean() == pytest.approx(7.0, abs=0.5)


class TestProfiles:
    def test_probability_range(self):
        with pytest.raises(ScenarioError):
            TenantProfile(burst_probability=1.5)

    def test_ar_coefficient_range(self):
        with pytest.raises(ScenarioError):
            TenantProfile(ar_coefficient=1.0)

    def test_negative_amplitude(self):
        with pytest.raises(ScenarioError):
            TenantProfile(daily_amplitude=-1.0)


class TestScenario:
    def test_tenants_get_independent_streams(self):
        scenario = ScenarioConfig((("a", TenantProfile()), ("b", TenantProfile())), weeks=1)
        a, b = Traffic.generate_scenario(scenario)
        assert (a.tenant_id, b.tenant_id) == ("a", "b")
        assert len(a) == 168
        assert not np.array_equal(a.values, b.values)

    def test_duplicate_tenant(self):
        with pytest.raises(ScenarioError):
            ScenarioConfig((("a", TenantProfile()), ("a", TenantProfile())), weeks=1)

    def test_shipped_scenario_file(self):
        scenario = Traffic.load_scenario(Path(__file__).resolve().parent.parent / "scenario.json")
        assert [t for t, _ in scenario.tenants] == ["embb-0", "urllc-0"]
        assert scenario.hours == 336
        assert dict(scenario.tenants)["urllc-0"].ar_coefficient == 0.8

    def test_document_round_trip(self, tmp_path):
        scenario = Traffic.benchmark_scenario(2, 7, "seasonal_ar")
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(scenario.to_dict()))
        assert Traffic.load_scenario(path) == scenario

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            Traffic.load_scenario(tmp_path / "missing.json")

    def test_malformed_document(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({"weeks": 2}))
        with pytest.raises(ScenarioError):
            Traffic.load_scenario(path)

    def test_unknown_benchmark_kind(self):
        with pytest.raises(ScenarioError):
            Traffic.benchmark_scenario(2, 42, "bursty")

    def test_csv_output(self, tmp_path):
        scenario = ScenarioConfig((("a", TenantProfile()), ("b", TenantProfile(base_load=10.0))), weeks=1, seed=5)
        series_list = Traffic.generate_scenario(scenario, tmp_path)
        loaded = Series.read_csv(tmp_path / Traffic.SCENARIO_CSV)
        assert sorted(loaded) == ["a", "b"]
        for series in series_list:
            assert np.array_equal(loaded[series.tenant_id].values, series.values)
