"""
# GradCheck.py
解析勾配と中心差分を比べる勾配チェッカー。

## 使い方
```python
def loss_fn():
    return Gaussian.squared_error(Dense.dense_forward(x, w, b), target)

worst = grad_check(loss_fn, params, coordinates=50, epsilon=1e-5)
assert worst < 1e-6
```
"""

from typing import Callable

import numpy as np

from modules.Tensor import ParameterSet, Tape, TensorLike, value


class GradCheckError(RuntimeError):
    """損失が有限でない"""


def _loss(loss_fn: Callable[[], TensorLike]) -> float:
    loss = float(value(loss_fn()))
    if not np.isfinite(loss):
        raise GradCheckError(f"損失が有限ではありません: {loss}")
    return loss


def grad_check(
    loss_fn: Callable[[], TensorLike],
    params: ParameterSet,
    coordinates: int = 50,
    epsilon: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """ランダムに選んだ coordinates 個の座標で最悪の相対誤差を返す

    相対誤差は |a − n| / max(|a|, |n|, floor)。
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon は [1e-6, 1e-3] の範囲である必要があります: {epsilon}")
    params.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        if not np.isfinite(float(value(loss))):
            raise GradCheckError(f"損失が有限ではありません: {float(value(loss))}")
        tape.backward(loss)
    analytic = {tensor.name: tensor.grad.copy() for tensor in params}

    rng = np.random.default_rng(seed)
    tensors = list(params)
    sizes = np.array([t.data.size for t in tensors], dtype=np.float64)
    worst = 0.0
    for _ in range(coordinates):
        tensor = tensors[rng.choice(len(tensors), p=sizes / sizes.sum())]
        flat = tensor.data.reshape(-1)
        index = int(rng.integers(flat.size))
        original = flat[index]
        flat[index] = original + epsilon
        plus = _loss(loss_fn)
        flat[index] = original - epsilon
        minus = _loss(loss_fn)
        flat[index] = original
        numeric = (plus - minus) / (2.0 * epsilon)
        a = analytic[tensor.name].reshape(-1)[index]
        error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, error)
    return worst
