"""
# SFF.py
単純フィードフォワード推定器。

入力は標準化済みの context と最初の予測時刻の時刻共変量。隠れ層 [40, 40]（ReLU）の後、
予測各時刻の (μ, σ) を一度に出力する。時刻間の依存は持たず、各時刻を独立に標本化する。
"""

import numpy as np

from modules import Dense, Gaussian
from modules.Tensor import ParameterSet, reshape


class SFFNetwork:
    """SFFのパラメータ初期化・損失・標本化"""

    probabilistic = True

    def __init__(self, config):
        self.config = config

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        params = ParameterSet()
        n_in = self.config.context_length + 2
        for i, width in enumerate(self.config.hidden_dims):
            Dense.init_dense(params, f"sff.hidden{i}", n_in, width, rng)
            n_in = width
        Dense.init_dense(params, "sff.out", n_in, 2 * self.config.horizon, rng)
        return params

    def _forward(self, params, context: np.ndarray, first_covariate: np.ndarray) -> Gaussian.GaussianParams:
        x = np.concatenate([context, first_covariate], axis=-1)
        for i in range(len(self.config.hidden_dims)):
            x = Dense.dense_forward(x, params[f"sff.hidden{i}.W"], params[f"sff.hidden{i}.b"], "relu")
        raw = Dense.dense_forward(x, params["sff.out.W"], params["sff.out.b"], "identity")
        return Gaussian.gaussian_head(reshape(raw, (self.config.horizon, 2)))

    def window_loss(self, params, window):
        head = self._forward(params, window.context, window.target_covariates[0])
        return Gaussian.gaussian_nll(head, window.target)

    def sample_paths(self, params, context, context_covariates, future_covariates, num_samples, rng):
        c = self.config.context_length
        head = self._forward(params, context[-c:], future_covariates[0])
        mu, sigma = head.mu, head.sigma
        return mu[None, :] + sigma[None, :] * rng.standard_normal((num_samples, self.config.horizon))
