"""学習窓・学習・予測・ローリング評価・保存のテスト"""

from dataclasses import replace

import numpy as np
import pytest

import Estimator
import Series
import Traffic
from EstimatorType import EstimatorConfig, EstimatorError, InsufficientHistoryError
from helpers import ConstantPredictor, OraclePredictor, SeasonalNaivePredictor, make_series, sinusoid


class TestEstimatorConfig:
    def test_unknown_kind(self):
        with pytest.raises(EstimatorError):
            EstimatorConfig(kind="arima")

    def test_batch_size_must_be_one(self):
        with pytest.raises(EstimatorError):
            EstimatorConfig(batch_size=4)

    def test_kind_is_normalized(self):
        assert EstimatorConfig(kind="DeepAR").kind == "deepar"

    def test_from_dict_ignores_unknown_keys(self):
        cfg = EstimatorConfig.from_dict({"kind": "sff", "hidden_dims": [4, 4], "train_fraction": 0.8})
        assert cfg.hidden_dims == (4, 4)
        assert cfg.probabilistic


class TestMakeWindows:
    def test_two_weeks(self, two_week_series):
        assert len(Estimator.make_windows(two_week_series, EstimatorConfig())) == 289

    def test_exactly_one_window(self):
        windows = Estimator.make_windows(make_series(np.arange(48.0)), EstimatorConfig())
        assert len(windows) == 1
        assert windows[0].context.tolist() == list(range(24))
        assert windows[0].target.tolist() == list(range(24, 48))

    def test_too_short(self):
        with pytest.raises(InsufficientHistoryError):
            Estimator.make_windows(make_series(np.arange(47.0)), EstimatorConfig())

    def test_covariates_follow_the_target(self):
        window = Estimator.make_windows(make_series(np.arange(48.0)), EstimatorConfig())[0]
        assert window.target_covariates.shape == (24, 2)
        assert window.target_covariates[0, 0] == 0.0


class TestTrain:
    def test_same_seed_same_predictor(self, two_week_series, tiny_config):
        first = Estimator.train(two_week_series, tiny_config)
        second = Estimator.train(two_week_series, tiny_config)
        assert Estimator.fingerprint(first) == Estimator.fingerprint(second)
        assert first.meta.epoch_losses == second.meta.epoch_losses

    def test_seed_changes_parameters(self, two_week_series, tiny_config):
        first = Estimator.train(two_week_series, tiny_config)
        second = Estimator.train(two_week_series, replace(tiny_config, seed=8))
        assert Estimator.fingerprint(first) != Estimator.fingerprint(second)

    def test_loss_decreases(self, two_week_series, tiny_config):
        predictor = Estimator.train(two_week_series, replace(tiny_config, epochs=3))
        losses = predictor.meta.epoch_losses
        assert len(losses) == 3
        assert all(np.isfinite(losses))
        assert losses[-1] < losses[0]

    def test_meta(self, two_week_series, tiny_config):
        predictor = Estimator.train(two_week_series, tiny_config)
        assert predictor.meta.windows == 289
        assert predictor.meta.train_seconds > 0

    def test_short_series(self, tiny_config):
        with pytest.raises(InsufficientHistoryError):
            Estimator.train(make_series(np.ones(30)), tiny_config)

    def test_constant_series_is_finite(self, constant_series, tiny_config):
        predictor = Estimator.train(constant_series, tiny_config)
        assert predictor.scaler.scale == 1.0
        assert np.isfinite(predictor.meta.final_loss)


class TestPredict:
    @pytest.fixture
    def predictor(self, two_week_series, tiny_config):
        return Estimator.train(two_week_series, tiny_config)

    def test_shape_and_start(self, predictor, two_week_series):
        forecast = Estimator.predict(predictor, two_week_series, seed=1)
        assert forecast.samples.shape == (20, 24)
        assert forecast.start == two_week_series.end + two_week_series.step

    def test_non_negative(self, predictor):
        # 需要ゼロ付近の文脈
        forecast = Estimator.predict(predictor, make_series(np.zeros(48)), seed=1)
        assert np.all(forecast.samples >= 0.0)

    def test_same_seed_same_samples(self, predictor, two_week_series):
        first = Estimator.predict(predictor, two_week_series, seed=5)
        second = Estimator.predict(predictor, two_week_series, seed=5)
        assert np.array_equal(first.samples, second.samples)

    def test_forecast_with_dispatches(self, predictor, two_week_series):
        assert not hasattr(predictor, "predict")
        trained = Estimator.forecast_with(predictor, two_week_series, 5)
        assert np.array_equal(trained.samples, Estimator.predict(predictor, two_week_series, seed=5).samples)
        plain = Estimator.forecast_with(ConstantPredictor(4.0), two_week_series, 5)
        assert plain.samples.tolist() == [[4.0] * 24]

    def test_seed_changes_samples(self, predictor, two_week_series):
        first = Estimator.predict(predictor, two_week_series, seed=5)
        second = Estimator.predict(predictor, two_week_series, seed=6)
        assert not np.array_equal(first.samples, second.samples)

    def test_short_context(self, predictor):
        with pytest.raises(InsufficientHistoryError):
            Estimator.predict(predictor, make_series(np.ones(10)), seed=0)

    def test_lstm_returns_one_path(self, two_week_series, tiny_config):
        predictor = Estimator.train(two_week_series, replace(tiny_config, kind="lstm", epochs=1))
        forecast = Estimator.predict(predictor, two_week_series, seed=0)
        assert forecast.num_samples == 1
        assert np.array_equal(forecast.samples, Estimator.predict(predictor, two_week_series, seed=99).samples)


class TestEvaluate:
    def test_oracle_has_zero_error(self, two_week_series):
        train, test = Series.split_train_test(two_week_series, 0.8)
        cfg = EstimatorConfig()
        result = Estimator.evaluate(OraclePredictor(two_week_series), test, cfg, history=train)
        assert result.mse == 0.0
        assert result.blocks == len(test) // 24
        assert result.coverage_10_90 is None

    def test_constant_on_constant(self, constant_series):
        train, test = Series.split_train_test(constant_series, 0.8)
        result = Estimator.evaluate(ConstantPredictor(50.0), test, EstimatorConfig(), history=train)
        assert result.mse == 0.0

    def test_repeating_last_day_on_pure_daily_cycle(self):
        series = make_series(sinusoid(240))
        train, test = Series.split_train_test(series, 0.8)
        result = Estimator.evaluate(SeasonalNaivePredictor(), test, EstimatorConfig(), history=train)
        assert result.mse == pytest.approx(0.0, abs=1e-18)

    def test_constant_offset(self):
        series = make_series(np.full(120, 2.0))
        train, test = Series.split_train_test(series, 0.8)
        result = Estimator.evaluate(ConstantPredictor(0.0), test, EstimatorConfig(), history=train)
        assert result.mse == pytest.approx(4.0)

    def test_without_history_uses_test_prefix(self):
        test = make_series(np.full(72, 3.0))
        result = Estimator.evaluate(ConstantPredictor(3.0), test, EstimatorConfig())
        assert result.blocks == 2
        assert result.predict_ms_per_block >= 0.0

    def test_test_shorter_than_horizon(self):
        series = make_series(np.ones(60))
        with pytest.raises(InsufficientHistoryError):
            Estimator.evaluate(ConstantPredictor(1.0), series.slice(40, 60), EstimatorConfig(), history=series.slice(0, 40))

    def test_probabilistic_coverage(self, two_week_series, tiny_config):
        train, test = Series.split_train_test(two_week_series, 0.8)
        predictor = Estimator.train(train, tiny_config)
        result = Estimator.evaluate(predictor, test, tiny_config, history=train)
        assert 0.0 <= result.coverage_10_90 <= 1.0
        assert np.isfinite(result.mse)


class TestSaveLoad:
    def test_round_trip(self, tmp_path, two_week_series, tiny_config):
        predictor = Estimator.train(two_week_series, tiny_config)
        path = Estimator.save_predictor(predictor, tmp_path / "model")
        assert path.with_suffix(".prbm").exists()
        assert path.with_suffix(".json").exists()

        loaded = Estimator.load_predictor(path)
        assert loaded.kind == predictor.kind
        assert loaded.config == predictor.config
        assert Estimator.fingerprint(loaded) == Estimator.fingerprint(predictor)
        assert np.array_equal(
            Estimator.predict(loaded, two_week_series, 3).samples,
            Estimator.predict(predictor, two_week_series, 3).samples,
        )


@pytest.mark.slow
class TestLearnsSeasonality:
    @pytest.mark.parametrize("kind", ["sff", "deepar", "transformer"])
    def test_beats_repeating_last_day(self, kind):
        series = Traffic.generate_scenario(Traffic.benchmark_scenario(4, 42, "seasonal_ar"))[0]
        train, test = Series.split_train_test(series, 0.8)
        cfg = EstimatorConfig(kind=kind, epochs=5, cells_per_layer=16, hidden_dims=(20, 20), model_dim=16, num_eval_samples=50)
        predictor = Estimator.train(train, cfg)
        learned = Estimator.evaluate(predictor, test, cfg, history=train)
        baseline = Estimator.evaluate(SeasonalNaivePredictor(), test, cfg, history=train)
        assert learned.mse < baseline.mse

    def test_more_data_helps_deepar(self):
        cfg = EstimatorConfig(kind="deepar", epochs=2, cells_per_layer=16, num_eval_samples=50)
        errors = []
        for weeks in (2, 10):
            series = Traffic.generate_scenario(Traffic.benchmark_scenario(weeks, 42))[0]
            train, test = Series.split_train_test(series, 0.8)
            errors.append(Estimator.evaluate(Estimator.train(train, cfg), test, cfg, history=train).mse)
        assert errors[1] < errors[0]


def test_sinusoid_helper_is_non_negative():
    assert np.all(sinusoid(100, amplitude=80.0, base=10.0) >= 0.0)
