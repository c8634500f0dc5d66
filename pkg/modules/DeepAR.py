"""
# DeepAR.py
自己回帰型のLSTMエンコーダー・デコーダー推定器。

時刻 t の入力は [z_{t-1}, hour_t/24, weekday_t/7]。学習時は教師強制で
context + horizon を展開し、予測区間の各時刻でガウスNLLを取る。予測時は
context を一度展開した状態をサンプル数だけ複製し、引いた値を次の入力に戻す
祖先サンプリングで各パスを作る。
"""

import numpy as np

from modules import Dense, Gaussian, LSTMCell
from modules.Tensor import ParameterSet, stack


class DeepARNetwork:
    """DeepARのパラメータ初期化・損失・標本化"""

    probabilistic = True

    def __init__(self, config):
        self.config = config

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        params = ParameterSet()
        n_in = 3
        for layer in range(self.config.rnn_layers):
            _, bias = LSTMCell.init_lstm(params, f"deepar.lstm{layer}", n_in, self.config.cells_per_layer, rng)
            # 忘却ゲートのバイアスを1寄りにする
            n = self.config.cells_per_layer
            bias.data[n : 2 * n] += 1.0
            n_in = self.config.cells_per_layer
        Dense.init_dense(params, "deepar.head", n_in, 2, rng)
        return params

    def _zero_state(self, batch_shape=()):
        shape = tuple(batch_shape) + (self.config.cells_per_layer,)
        return [(np.zeros(shape), np.zeros(shape)) for _ in range(self.config.rnn_layers)]

    def _step(self, params, x, state):
        new_state = []
        for layer, (h, c) in enumerate(state):
            h, c = LSTMCell.lstm_cell_forward(
                x, h, c, params[f"deepar.lstm{layer}.W"], params[f"deepar.lstm{layer}.b"]
            )
            new_state.append((h, c))
            x = h
        return x, new_state

    def _head(self, params, h) -> Gaussian.GaussianParams:
        raw = Dense.dense_forward(h, params["deepar.head.W"], params["deepar.head.b"], "identity")
        return Gaussian.gaussian_head(raw)

    def window_loss(self, params, window):
        z = np.concatenate([window.context, window.target])
        covariates = np.concatenate([window.context_covariates, window.target_covariates])
        c = window.context.size
        state = self._zero_state()
        outputs = []
        for t in range(1, z.size):
            x = np.array([z[t - 1], covariates[t, 0], covariates[t, 1]])
            h, state = self._step(params, x, state)
            if t >= c:
                outputs.append(h)
        head = self._head(params, stack(outputs))
        return Gaussian.gaussian_nll(head, window.target)

    def sample_paths(self, params, context, context_covariates, future_covariates, num_samples, rng):
        c = self.config.context_length
        z = context[-c:]
        covariates = context_covariates[-c:]
        state = self._zero_state()
        for t in range(1, c):
            x = np.array([z[t - 1], covariates[t, 0], covariates[t, 1]])
            _, state = self._step(params, x, state)

        state = [(np.tile(h, (num_samples, 1)), np.tile(cell, (num_samples, 1))) for h, cell in state]
        previous = np.full(num_samples, z[-1])
        paths = np.empty((num_samples, self.config.horizon))
        for i in range(self.config.horizon):
            x = np.column_stack(
                [previous, np.full(num_samples, future_covariates[i, 0]), np.full(num_samples, future_covariates[i, 1])]
            )
            h, state = self._step(params, x, state)
            drawn = Gaussian.sample(self._head(params, h), rng)
            paths[:, i] = drawn
            previous = drawn
        return paths
