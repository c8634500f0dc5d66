"""
# LSTMBaseline.py
決定論的な1ステップ先LSTM（比較用のベースライン、既定の隠れサイズは1）。

学習は窓全体を教師強制で展開し、各時刻の1ステップ先予測の二乗誤差を取る。
予測時は与えられた履歴全体で状態を温めてから horizon ステップを再帰的に出す。
そのため予測コストは履歴の長さに比例する。
"""

import numpy as np

from modules import Dense, Gaussian, LSTMCell
from modules.Tensor import ParameterSet, stack


class LSTMBaselineNetwork:
    """決定論LSTMのパラメータ初期化・損失・予測"""

    probabilistic = False

    def __init__(self, config):
        self.config = config

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        params = ParameterSet()
        LSTMCell.init_lstm(params, "lstm.cell", 3, self.config.neurons, rng)
        Dense.init_dense(params, "lstm.out", self.config.neurons, 1, rng)
        return params

    def _step(self, params, x, h, c):
        h, c = LSTMCell.lstm_cell_forward(x, h, c, params["lstm.cell.W"], params["lstm.cell.b"])
        return h, c

    def window_loss(self, params, window):
        z = np.concatenate([window.context, window.target])
        covariates = np.concatenate([window.context_covariates, window.target_covariates])
        h = np.zeros(self.config.neurons)
        c = np.zeros(self.config.neurons)
        hidden = []
        for t in range(1, z.size):
            h, c = self._step(params, np.array([z[t - 1], covariates[t, 0], covariates[t, 1]]), h, c)
            hidden.append(h)
        predicted = Dense.dense_forward(stack(hidden), params["lstm.out.W"], params["lstm.out.b"], "identity")
        return Gaussian.squared_error(predicted, z[1:, None])

    def sample_paths(self, params, context, context_covariates, future_covariates, num_samples, rng):
        h = np.zeros(self.config.neurons)
        c = np.zeros(self.config.neurons)
        for t in range(1, context.size):
            h, c = self._step(params, np.array([context[t - 1], context_covariates[t, 0], context_covariates[t, 1]]), h, c)
        previous = context[-1]
        path = np.empty(self.config.horizon)
        for i in range(self.config.horizon):
            h, c = self._step(params, np.array([previous, future_covariates[i, 0], future_covariates[i, 1]]), h, c)
            previous = float(Dense.dense_forward(h, params["lstm.out.W"], params["lstm.out.b"], "identity")[0])
            path[i] = previous
        return path[None, :]
