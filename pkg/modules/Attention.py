"""
# Attention.py
スケーリング付き内積アテンション softmax(QKᵀ/√d)·V と正弦波位置埋め込み。
"""

import numpy as np

from modules.Tensor import ShapeError, Tensor, TensorLike, active_tape, make_output, push, value


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def attention_weights(queries: np.ndarray, keys: np.ndarray, causal: bool = False) -> np.ndarray:
    """各クエリ行の重み（非負、和が1）"""
    d = queries.shape[-1]
    scores = queries @ np.swapaxes(keys, -1, -2) / np.sqrt(d)
    if causal:
        tq, tk = scores.shape[-2], scores.shape[-1]
        mask = np.triu(np.ones((tq, tk), dtype=bool), k=1 + tk - tq)
        scores = np.where(mask, -np.inf, scores)
    return softmax(scores)


def attention_forward(queries: TensorLike, keys: TensorLike, values: TensorLike, causal: bool = False) -> TensorLike:
    """(..., Tq, d), (..., Tk, d), (..., Tk, dv) → (..., Tq, dv)

    causal=True のとき各クエリは自分より後ろのキーを見ない（デコーダー用）。

    Raises:
        ShapeError: 特徴次元または系列長が一致しない場合
    """
    qv, kv, vv = value(queries), value(keys), value(values)
    if qv.shape[-1] != kv.shape[-1] or kv.shape[-2] != vv.shape[-2]:
        raise ShapeError(f"アテンションの形状が一致しません: Q{qv.shape} K{kv.shape} V{vv.shape}")
    weights = attention_weights(qv, kv, causal)
    out = make_output(weights @ vv, (queries, keys, values))
    if isinstance(out, Tensor):
        scale = 1.0 / np.sqrt(qv.shape[-1])

        def backward():
            if out.grad is None:
                return
            d_out = out.grad
            d_weights = d_out @ np.swapaxes(vv, -1, -2)
            push(values, np.swapaxes(weights, -1, -2) @ d_out)
            d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=-1, keepdims=True)) * scale
            push(queries, d_scores @ kv)
            push(keys, np.swapaxes(d_scores, -1, -2) @ qv)

        active_tape().record(backward)
    return out


def sinusoidal_embedding(length: int, dim: int, offset: int = 0) -> np.ndarray:
    """(length, dim) の正弦波位置埋め込み"""
    positions = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    rates = np.exp(-np.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)
    angles = positions * rates[None, :]
    embedding = np.empty((length, dim), dtype=np.float64)
    embedding[:, 0::2] = np.sin(angles[:, 0::2])
    embedding[:, 1::2] = np.cos(angles[:, 1::2])
    return embedding
