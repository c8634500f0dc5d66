"""
# EstimatorType.py
推定器の設定、学習窓、学習済み予測器を表現するデータクラス。
"""

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Tuple

import numpy as np

from SeriesType import Scaler


KINDS = ("lstm", "sff", "deepar", "transformer")
PROBABILISTIC_KINDS = ("sff", "deepar", "transformer")


class EstimatorError(ValueError):
    """推定器の設定・入力エラー"""


class InsufficientHistoryError(EstimatorError):
    """学習・予測に必要な長さの履歴がない"""


class TrainingDivergedError(RuntimeError):
    """クリッピング後も損失が有限でない"""


@dataclass(frozen=True)
class EstimatorConfig:
    """推定器の設定

    Attributes:
        kind (str): lstm / sff / deepar / transformer
        epochs (int): エポック数
        batch_size (int): バッチサイズ（1のみ）
        context_length (int): 条件付けに使う過去の時間数
        horizon (int): 予測する時間数
        num_eval_samples (int): 予測時のサンプルパス数
        seed (int): 初期化とシャッフルの乱数シード
        hidden_dims (Tuple[int, ...]): SFFの隠れ層
        rnn_layers (int): DeepARのLSTM層数
        cells_per_layer (int): DeepARの各層のセル数
        model_dim (int): Transformerのモデル次元
        feedforward_dim (int): Transformerのフィードフォワード内部次元
        neurons (int): 決定論LSTMの隠れ状態サイズ
    """

    kind: str = "deepar"
    epochs: int = 5
    batch_size: int = 1
    context_length: int = 24
    horizon: int = 24
    num_eval_samples: int = 100
    seed: int = 42
    hidden_dims: Tuple[int, ...] = (40, 40)
    rnn_layers: int = 2
    cells_per_layer: int = 40
    model_dim: int = 32
    feedforward_dim: int = 4
    neurons: int = 1
    learning_rate: float = 1e-3
    clip_norm: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", str(self.kind).lower())
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.kind not in KINDS:
            raise EstimatorError(f"未知のモデルです: {self.kind}")
        if self.batch_size != 1:
            raise EstimatorError(f"バッチサイズは1のみ対応しています: {self.batch_size}")
        positive = {
            "epochs": self.epochs,
            "context_length": self.context_length,
            "horizon": self.horizon,
            "num_eval_samples": self.num_eval_samples,
            "rnn_layers": self.rnn_layers,
            "cells_per_layer": self.cells_per_layer,
            "model_dim": self.model_dim,
            "feedforward_dim": self.feedforward_dim,
            "neurons": self.neurons,
        }
        for name, number in positive.items():
            if int(number) < 1:
                raise EstimatorError(f"{name} は正である必要があります: {number}")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise EstimatorError(f"hidden_dims が不正です: {self.hidden_dims}")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise EstimatorError("learning_rate と clip_norm は正である必要があります")

    @property
    def probabilistic(self) -> bool:
        return self.kind in PROBABILISTIC_KINDS

    def with_kind(self, kind: str) -> "EstimatorConfig":
        return replace(self, kind=kind)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EstimatorConfig":
        """未知のキーは無視する"""
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names and v is not None})


@dataclass(frozen=True)
class TrainingWindow:
    """スライディング窓1つ分の教師データ（標準化済みの値）

    Attributes:
        context (np.ndarray): 過去 context_length 点
        target (np.ndarray): 続く horizon 点
        context_covariates (np.ndarray): context 各点の (hour/24, weekday/7)
        target_covariates (np.ndarray): target 各点の (hour/24, weekday/7)
    """

    context: np.ndarray
    target: np.ndarray
    context_covariates: np.ndarray
    target_covariates: np.ndarray


@dataclass(frozen=True)
class TrainingMeta:
    """学習時のメタデータ"""

    train_seconds: float
    epoch_losses: Tuple[float, ...]
    windows: int

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


@dataclass(frozen=True)
class Predictor:
    """学習済みの不変な予測器

    Attributes:
        kind (str): モデル種別
        params (Dict[str, np.ndarray]): 書き込み不可のパラメータスナップショット
        scaler (Scaler): 訓練データの標準化係数
        config (EstimatorConfig): 学習時の設定
        meta (TrainingMeta): 学習時間とエポック損失
    """

    kind: str
    params: Dict[str, np.ndarray] = field(repr=False)
    scaler: Scaler
    config: EstimatorConfig
    meta: TrainingMeta

    def metadata(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "scaler": self.scaler.to_dict(),
            "training": {
                "train_seconds": self.meta.train_seconds,
                "epoch_losses": list(self.meta.epoch_losses),
                "windows": self.meta.windows,
            },
        }
