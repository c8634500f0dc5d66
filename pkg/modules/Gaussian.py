"""
# Gaussian.py
ガウス尤度ヘッド、負の対数尤度、二乗誤差。

σ は softplus に下限 1e-4 を足して常に正にする。
"""

from dataclasses import dataclass

import numpy as np

from modules.Dense import sigmoid, softplus
from modules.Tensor import ShapeError, Tensor, TensorLike, active_tape, make_output, push, value


SIGMA_FLOOR = 1e-4
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class GaussianParams:
    """尤度ヘッドの出力 (μ, σ)"""

    mu: TensorLike
    sigma: TensorLike


def gaussian_head(raw: TensorLike) -> GaussianParams:
    """最終次元が2の出力を (μ, softplus + 下限) に分ける"""
    rv = value(raw)
    if rv.shape[-1] != 2:
        raise ShapeError(f"尤度ヘッドの出力次元は2である必要があります: {rv.shape}")
    mu_v = rv[..., 0]
    sigma_v = softplus(rv[..., 1]) + SIGMA_FLOOR
    mu = make_output(mu_v.copy(), (raw,))
    sigma = make_output(sigma_v, (raw,))
    if isinstance(mu, Tensor):

        def backward():
            g = np.zeros_like(rv)
            if mu.grad is not None:
                g[..., 0] = mu.grad
            if sigma.grad is not None:
                g[..., 1] = sigma.grad * sigmoid(rv[..., 1])
            push(raw, g)

        active_tape().record(backward)
    return GaussianParams(mu, sigma)


def gaussian_nll(params: GaussianParams, target: np.ndarray) -> TensorLike:
    """要素平均の ½ln(2πσ²) + (x−μ)²/(2σ²)

    Raises:
        ShapeError: 形状が一致しない場合
        ValueError: σ ≤ 0 の場合
    """
    mu_v, sigma_v = value(params.mu), value(params.sigma)
    x = np.asarray(target, dtype=np.float64)
    if mu_v.shape != x.shape or sigma_v.shape != x.shape:
        raise ShapeError(f"NLLの形状が一致しません: mu{mu_v.shape} sigma{sigma_v.shape} x{x.shape}")
    if np.any(sigma_v <= 0):
        raise ValueError("σ は正である必要があります")
    z = (x - mu_v) / sigma_v
    n = x.size
    loss = np.mean(HALF_LOG_2PI + np.log(sigma_v) + 0.5 * z * z)
    out = make_output(np.asarray(loss), (params.mu, params.sigma))
    if isinstance(out, Tensor):

        def backward():
            g = float(out.grad)
            push(params.mu, g * (-(z / sigma_v)) / n)
            push(params.sigma, g * (1.0 / sigma_v - z * z / sigma_v) / n)

        active_tape().record(backward)
    return out


def squared_error(predicted: TensorLike, target: np.ndarray) -> TensorLike:
    """要素平均の二乗誤差（決定論LSTMの損失）"""
    pv = value(predicted)
    x = np.asarray(target, dtype=np.float64)
    if pv.shape != x.shape:
        raise ShapeError(f"二乗誤差の形状が一致しません: {pv.shape} != {x.shape}")
    diff = pv - x
    out = make_output(np.asarray(np.mean(diff * diff)), (predicted,))
    if isinstance(out, Tensor):

        def backward():
            push(predicted, float(out.grad) * 2.0 * diff / diff.size)

        active_tape().record(backward)
    return out


def sample(params: GaussianParams, rng: np.random.Generator) -> np.ndarray:
    """(μ, σ) から1回ずつ引く"""
    mu_v, sigma_v = value(params.mu), value(params.sigma)
    return mu_v + sigma_v * rng.standard_normal(mu_v.shape)
