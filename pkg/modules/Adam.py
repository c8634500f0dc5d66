"""
# Adam.py
バイアス補正付きAdamと大域ノルムによる勾配クリッピング。
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from modules.Tensor import ParameterSet


@dataclass
class AdamState:
    """Adamのモーメントとステップ数

    Attributes:
        learning_rate (float): 学習率
        beta1 (float): 1次モーメントの減衰率
        beta2 (float): 2次モーメントの減衰率
        epsilon (float): ゼロ除算防止
        t (int): 実行済みステップ数
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0 or not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1 or self.epsilon <= 0:
            raise ValueError(f"Adamのハイパーパラメータが不正です: {self}")


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """全パラメータをその場で1ステップ更新する"""
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for tensor in params:
        grad = tensor.grad
        if grad is None:
            raise ValueError(f"勾配がありません: {tensor.name}")
        m = state.m.setdefault(tensor.name, np.zeros_like(tensor.data))
        v = state.v.setdefault(tensor.name, np.zeros_like(tensor.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        tensor.data -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)


def clip_grad_norm(params: ParameterSet, max_norm: float = 10.0) -> float:
    """大域ノルムが max_norm を超えたら縮小し、クリップ前のノルムを返す"""
    norm = params.grad_norm()
    if np.isfinite(norm) and norm > max_norm:
        factor = max_norm / norm
        for tensor in params:
            tensor.grad *= factor
    return norm
