"""
# LSTMCell.py
LSTMセル1ステップ分の順伝播と逆伝播。

ゲート順は (input, forget, output, candidate)。W は (n_in + n_hidden, 4·n_hidden)。
"""

from typing import Tuple

import numpy as np

from modules.Dense import sigmoid
from modules.Tensor import ParameterSet, ShapeError, Tensor, TensorLike, active_tape, make_output, push, value


def lstm_cell_forward(
    x_t: TensorLike, h_prev: TensorLike, c_prev: TensorLike, weights: TensorLike, bias: TensorLike
) -> Tuple[TensorLike, TensorLike]:
    """標準LSTMのゲート式で (h_t, c_t) を返す

    Raises:
        ShapeError: 隠れ状態・セル状態・重みの次元が一致しない場合
    """
    xv, hv, cv, wv, bv = value(x_t), value(h_prev), value(c_prev), value(weights), value(bias)
    n_hidden = hv.shape[-1]
    if (
        cv.shape != hv.shape
        or wv.shape != (xv.shape[-1] + n_hidden, 4 * n_hidden)
        or bv.shape != (4 * n_hidden,)
    ):
        raise ShapeError(f"LSTMセルの形状が一致しません: x{xv.shape} h{hv.shape} c{cv.shape} W{wv.shape}")

    xh = np.concatenate([xv, hv], axis=-1)
    gates = xh @ wv + bv
    i = sigmoid(gates[..., :n_hidden])
    f = sigmoid(gates[..., n_hidden : 2 * n_hidden])
    o = sigmoid(gates[..., 2 * n_hidden : 3 * n_hidden])
    g = np.tanh(gates[..., 3 * n_hidden :])
    c = f * cv + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c

    inputs = (x_t, h_prev, c_prev, weights, bias)
    h_out = make_output(h, inputs)
    c_out = make_output(c, inputs)
    if isinstance(h_out, Tensor):

        def backward():
            dh = h_out.grad if h_out.grad is not None else np.zeros_like(h)
            dc = c_out.grad if c_out.grad is not None else np.zeros_like(c)
            dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
            d_gates = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * cv * f * (1.0 - f),
                    dh * tanh_c * o * (1.0 - o),
                    dc * i * (1.0 - g * g),
                ],
                axis=-1,
            )
            d2 = d_gates.reshape(-1, 4 * n_hidden)
            push(weights, xh.reshape(-1, xh.shape[-1]).T @ d2)
            push(bias, d2.sum(axis=0))
            d_xh = d_gates @ wv.T
            push(x_t, d_xh[..., : xv.shape[-1]])
            push(h_prev, d_xh[..., xv.shape[-1] :])
            push(c_prev, dc * f)

        active_tape().record(backward)
    return h_out, c_out


def init_lstm(params: ParameterSet, name: str, n_in: int, n_hidden: int, rng: np.random.Generator):
    """一様乱数で重みを初期化し (W, b) を返す"""
    bound = 1.0 / np.sqrt(n_in + n_hidden)
    w = params.add(f"{name}.W", rng.uniform(-bound, bound, size=(n_in + n_hidden, 4 * n_hidden)))
    b = params.add(f"{name}.b", rng.uniform(-bound, bound, size=(4 * n_hidden,)))
    return w, b
