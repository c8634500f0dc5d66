"""
# Transformer.py
エンコーダー1層・デコーダー1層・単一ヘッドのTransformer推定器。

各時刻の特徴 [z, hour/24, weekday/7]（デコーダーは z_{t-1}）を model_dim に埋め込み、
正弦波位置埋め込みを足す。デコーダーは因果マスク付き自己アテンション、
エンコーダー出力へのクロスアテンション、フィードフォワード（内部次元 feedforward_dim）を
残差接続でつなぎ、各時刻の (μ, σ) を出す。予測はDeepARと同じ祖先サンプリング。
"""

import numpy as np

from modules import Attention, Dense, Gaussian
from modules.Tensor import ParameterSet, add


class TransformerNetwork:
    """Transformerのパラメータ初期化・損失・標本化"""

    probabilistic = True

    def __init__(self, config):
        self.config = config

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        d = self.config.model_dim
        ff = self.config.feedforward_dim
        params = ParameterSet()
        Dense.init_dense(params, "tf.embed", 3, d, rng)
        for block in ("enc.self", "dec.self", "dec.cross"):
            for proj in ("q", "k", "v", "o"):
                Dense.init_dense(params, f"tf.{block}.{proj}", d, d, rng)
        for block in ("enc", "dec"):
            Dense.init_dense(params, f"tf.{block}.ff1", d, ff, rng)
            Dense.init_dense(params, f"tf.{block}.ff2", ff, d, rng)
        Dense.init_dense(params, "tf.head", d, 2, rng)
        return params

    def _dense(self, params, name, x, activation="identity"):
        return Dense.dense_forward(x, params[f"{name}.W"], params[f"{name}.b"], activation)

    def _embed(self, params, features: np.ndarray, offset: int):
        x = self._dense(params, "tf.embed", features)
        length = features.shape[-2]
        return add(x, Attention.sinusoidal_embedding(length, self.config.model_dim, offset))

    def _attend(self, params, block, x, memory, causal):
        q = self._dense(params, f"tf.{block}.q", x)
        k = self._dense(params, f"tf.{block}.k", memory)
        v = self._dense(params, f"tf.{block}.v", memory)
        attended = Attention.attention_forward(q, k, v, causal=causal)
        return add(x, self._dense(params, f"tf.{block}.o", attended))

    def _feedforward(self, params, block, x):
        hidden = self._dense(params, f"tf.{block}.ff1", x, "relu")
        return add(x, self._dense(params, f"tf.{block}.ff2", hidden))

    def _encode(self, params, features):
        x = self._embed(params, features, 0)
        x = self._attend(params, "enc.self", x, x, causal=False)
        return self._feedforward(params, "enc", x)

    def _decode(self, params, features, memory):
        x = self._embed(params, features, self.config.context_length)
        x = self._attend(params, "dec.self", x, x, causal=True)
        x = self._attend(params, "dec.cross", x, memory, causal=False)
        x = self._feedforward(params, "dec", x)
        return Gaussian.gaussian_head(self._dense(params, "tf.head", x))

    def window_loss(self, params, window):
        encoder_in = np.column_stack([window.context, window.context_covariates])
        previous = np.concatenate([window.context[-1:], window.target[:-1]])
        decoder_in = np.column_stack([previous, window.target_covariates])
        memory = self._encode(params, encoder_in)
        return Gaussian.gaussian_nll(self._decode(params, decoder_in, memory), window.target)

    def sample_paths(self, params, context, context_covariates, future_covariates, num_samples, rng):
        c = self.config.context_length
        horizon = self.config.horizon
        memory = self._encode(params, np.column_stack([context[-c:], context_covariates[-c:]]))

        decoder_in = np.empty((num_samples, horizon, 3))
        decoder_in[:, :, 1:] = future_covariates[None, :, :]
        decoder_in[:, 0, 0] = context[-1]
        paths = np.empty((num_samples, horizon))
        for i in range(horizon):
            head = self._decode(params, decoder_in[:, : i + 1, :], memory)
            drawn = Gaussian.sample(Gaussian.GaussianParams(head.mu[:, i], head.sigma[:, i]), rng)
            paths[:, i] = drawn
            if i + 1 < horizon:
                decoder_in[:, i + 1, 0] = drawn
        return paths
