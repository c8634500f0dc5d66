"""
# Estimator.py
4種類の推定器（lstm / sff / deepar / transformer）を同じ学習・予測の形で扱うハブ。

## 使い方
```python
import Estimator
from EstimatorType import EstimatorConfig

cfg = EstimatorConfig(kind="deepar")
predictor = Estimator.train(train_series, cfg)
forecast = Estimator.predict(predictor, train_series, seed=0)
result = Estimator.evaluate(predictor, test_series, cfg, history=train_series)
print(result.mse, result.predict_seconds)

Estimator.save_predictor(predictor, "out/deepar")
predictor = Estimator.load_predictor("out/deepar")
```
"""

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

import Series
from EstimatorType import (
    EstimatorConfig,
    EstimatorError,
    InsufficientHistoryError,
    Predictor,
    TrainingDivergedError,
    TrainingMeta,
    TrainingWindow,
)
from SeriesType import HOUR, SampleForecast, Scaler, TimeSeries, calendar_features
from modules import Adam, ParamFile
from modules.DeepAR import DeepARNetwork
from modules.LSTMBaseline import LSTMBaselineNetwork
from modules.SFF import SFFNetwork
from modules.Tensor import ParameterSet, Tape
from modules.Transformer import TransformerNetwork


logger = logging.getLogger("Estimator")

NETWORKS = {
    "lstm": LSTMBaselineNetwork,
    "sff": SFFNetwork,
    "deepar": DeepARNetwork,
    "transformer": TransformerNetwork,
}


def rng_for(seed: int) -> np.random.Generator:
    """プラットフォームに依存しないカウンター型乱数（Philox）"""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def make_windows(series: TimeSeries, cfg: EstimatorConfig, scaler: Optional[Scaler] = None) -> List[TrainingWindow]:
    """ストライド1の全スライディング窓（len − context − horizon + 1 個）

    scaler を渡すと値を標準化して格納する。

    Raises:
        InsufficientHistoryError: 系列が context + horizon より短い場合
    """
    c, h = cfg.context_length, cfg.horizon
    count = len(series) - c - h + 1
    if count < 1:
        raise InsufficientHistoryError(f"窓を作るには {c + h} 点必要です: {len(series)}")
    values = scaler.transform(series.values) if scaler else series.values
    covariates = series.calendar()
    windows = []
    for i in range(count):
        windows.append(
            TrainingWindow(
                context=values[i : i + c],
                target=values[i + c : i + c + h],
                context_covariates=covariates[i : i + c],
                target_covariates=covariates[i + c : i + c + h],
            )
        )
    return windows


def train(series: TimeSeries, cfg: EstimatorConfig) -> Predictor:
    """cfg.epochs 回、シャッフルした全窓をバッチサイズ1で学習する

    Raises:
        InsufficientHistoryError: 窓が1つも作れない場合
        TrainingDivergedError: クリッピング後も損失・勾配が有限でない場合
    """
    started = time.perf_counter()
    scaler, _ = Series.standardize(series)
    windows = make_windows(series, cfg, scaler)
    network = NETWORKS[cfg.kind](cfg)
    rng = rng_for(cfg.seed)
    params = network.init_params(rng)
    state = Adam.AdamState(learning_rate=cfg.learning_rate)

    epoch_losses = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for index in rng.permutation(len(windows)):
            params.zero_grad()
            with Tape() as tape:
                loss = network.window_loss(params, windows[index])
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    raise TrainingDivergedError(f"{cfg.kind}: エポック {epoch + 1} で損失が有限ではありません")
                tape.backward(loss)
            norm = Adam.clip_grad_norm(params, cfg.clip_norm)
            if not np.isfinite(norm):
                raise TrainingDivergedError(f"{cfg.kind}: エポック {epoch + 1} で勾配が有限ではありません")
            Adam.adam_step(params, state)
            total += loss_value
        epoch_losses.append(total / len(windows))
        logger.debug(f"{cfg.kind}: エポック {epoch + 1}/{cfg.epochs} 損失 {epoch_losses[-1]:.6f}")

    meta = TrainingMeta(time.perf_counter() - started, tuple(epoch_losses), len(windows))
    logger.info(f"{cfg.kind} の学習が完了しました: {len(windows)} 窓, {meta.train_seconds:.3f} 秒")
    return Predictor(cfg.kind, params.snapshot(), scaler, cfg, meta)


def predict(predictor: Predictor, context: TimeSeries, seed: int) -> SampleForecast:
    """context の直後 horizon 時間のサンプルパスを返す

    確率モデルは num_eval_samples 本、決定論LSTMは1本。元のスケールに戻し、0未満は0にする。

    Raises:
        InsufficientHistoryError: context が context_length より短い場合
    """
    cfg = predictor.config
    if len(context) < cfg.context_length:
        raise InsufficientHistoryError(f"context が短すぎます: {len(context)} < {cfg.context_length}")
    network = NETWORKS[predictor.kind](cfg)
    future_start = context.end + HOUR
    paths = network.sample_paths(
        predictor.params,
        predictor.scaler.transform(context.values),
        context.calendar(),
        calendar_features(future_start, cfg.horizon),
        cfg.num_eval_samples,
        rng_for(seed),
    )
    values = np.maximum(predictor.scaler.inverse(paths), 0.0)
    if not np.all(np.isfinite(values)):
        raise EstimatorError(f"{predictor.kind}: 予測に有限でない値が含まれています")
    return SampleForecast(future_start, values)


def forecast_with(predictor, context: TimeSeries, seed: int) -> SampleForecast:
    """学習済み Predictor なら predict、それ以外は predictor.predict(context, seed) を呼ぶ"""
    if isinstance(predictor, Predictor):
        return predict(predictor, context, seed)
    return predictor.predict(context, seed)


@dataclass(frozen=True)
class Evaluation:
    """ローリング評価の結果

    Attributes:
        mse (float): 全ブロックを通した式(1)のMSE
        predict_seconds (float): 予測呼び出しの合計実時間
        blocks (int): 評価したhorizon長ブロックの数
        coverage_10_90 (Optional[float]): 10〜90パーセンタイル区間の実測被覆率（1サンプルなら None）
    """

    mse: float
    predict_seconds: float
    blocks: int
    coverage_10_90: Optional[float] = None

    @property
    def predict_ms_per_block(self) -> float:
        return 1000.0 * self.predict_seconds / self.blocks


def evaluate(
    predictor,
    test: TimeSeries,
    cfg: EstimatorConfig,
    history: Optional[TimeSeries] = None,
    seed: int = 0,
) -> Evaluation:
    """テスト区間を重ならないhorizon長ブロックに分けて順に予測し、MSEを積算する

    predictor は学習済み Predictor か、``predict(context, seed) -> SampleForecast`` を持つ任意のオブジェクト。
    history を渡すと最初のブロックは訓練区間の末尾から予測する。渡さない場合は
    テスト区間の先頭 context_length 時間を文脈に使う。

    Raises:
        InsufficientHistoryError: ブロックが1つも作れない場合
    """
    h = cfg.horizon
    full = history.concat(test) if history is not None else test
    first = len(history) if history is not None else 0
    first = max(first, cfg.context_length)
    starts = list(range(first, len(full) - h + 1, h))
    if len(test) < h or not starts:
        raise InsufficientHistoryError(f"テスト区間が1ブロック分に足りません: {len(test)} < {h}")

    squared = 0.0
    count = 0
    covered = 0
    probabilistic = True
    elapsed = 0.0
    for block, start in enumerate(starts):
        context = full.slice(0, start)
        began = time.perf_counter()
        forecast = forecast_with(predictor, context, seed + block)
        elapsed += time.perf_counter() - began

        actual = full.slice(start, start + h)
        point = Series.mean_point(forecast)
        squared += Series.mse(actual, point) * h
        count += h
        if forecast.num_samples >= 2:
            covered += Series.interval_coverage(Series.to_quantiles(forecast), actual, 10, 90) * h
        else:
            probabilistic = False
    return Evaluation(squared / count, elapsed, len(starts), covered / count if probabilistic else None)


# ----------
# ---保存と読み込み
# ----------
def fingerprint(predictor: Predictor) -> str:
    """パラメータバイナリのSHA-256先頭16桁"""
    return hashlib.sha256(ParamFile.encode_params(predictor.params)).hexdigest()[:16]


def save_predictor(predictor: Predictor, path: Union[str, Path]) -> Path:
    """<path>.prbm（パラメータ）と <path>.json（設定・スケーラー・学習情報）を書き出す"""
    path = Path(path)
    ParamFile.save_params(predictor.params, path.with_suffix(".prbm"))
    sidecar = predictor.metadata()
    sidecar["fingerprint"] = fingerprint(predictor)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, ensure_ascii=False), encoding="utf-8")
    return path


def load_predictor(path: Union[str, Path]) -> Predictor:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    arrays = ParamFile.load_params(path.with_suffix(".prbm"))
    params: Dict[str, np.ndarray] = ParameterSet.from_arrays(arrays).snapshot()
    training = sidecar["training"]
    return Predictor(
        sidecar["kind"],
        params,
        Scaler.from_dict(sidecar["scaler"]),
        EstimatorConfig.from_dict(sidecar["config"]),
        TrainingMeta(float(training["train_seconds"]), tuple(training["epoch_losses"]), int(training["windows"])),
    )
