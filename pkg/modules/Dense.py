"""
# Dense.py
全結合層 y = act(x·W + b)。x は (..., n_in)、W は (n_in, n_out)。
"""

import numpy as np

from modules.Tensor import ParameterSet, ShapeError, TensorLike, active_tape, make_output, push, value


ACTIVATIONS = ("identity", "tanh", "relu", "softplus")


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # オーバーフローしない形
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softplus":
        return softplus(z)
    raise ValueError(f"未対応の活性化関数です: {activation}")


def _derivative(z: np.ndarray, y: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return np.ones_like(z)
    if activation == "tanh":
        return 1.0 - y * y
    if activation == "relu":
        return (z > 0).astype(np.float64)
    return sigmoid(z)


def dense_forward(x: TensorLike, weights: TensorLike, bias: TensorLike, activation: str = "identity") -> TensorLike:
    """アフィン変換と活性化

    Raises:
        ShapeError: x の最終次元と W の入力次元が一致しない場合
    """
    xv, wv, bv = value(x), value(weights), value(bias)
    if xv.shape[-1] != wv.shape[0] or bv.shape != (wv.shape[1],):
        raise ShapeError(f"全結合層の形状が一致しません: x{xv.shape} W{wv.shape} b{bv.shape}")
    z = xv @ wv + bv
    y = _activate(z, activation)
    out = make_output(y, (x, weights, bias))
    if not isinstance(out, np.ndarray):

        def backward():
            if out.grad is None:
                return
            dz = out.grad * _derivative(z, y, activation)
            dz2 = dz.reshape(-1, wv.shape[1])
            push(weights, xv.reshape(-1, wv.shape[0]).T @ dz2)
            push(bias, dz2.sum(axis=0))
            push(x, dz @ wv.T)

        active_tape().record(backward)
    return out


def init_dense(params: ParameterSet, name: str, n_in: int, n_out: int, rng: np.random.Generator):
    """[−1/√fan_in, +1/√fan_in] の一様乱数で重みを初期化し (W, b) を返す"""
    bound = 1.0 / np.sqrt(n_in)
    w = params.add(f"{name}.W", rng.uniform(-bound, bound, size=(n_in, n_out)))
    b = params.add(f"{name}.b", rng.uniform(-bound, bound, size=(n_out,)))
    return w, b
