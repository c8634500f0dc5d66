"""
# Tensor.py
逆伝播用の最小限のテンソル、演算テープ、パラメータ集合。

演算はアクティブな Tape があるときだけ記録される。テープなしで呼んだ場合は
ただの numpy 計算になり、先頭にサンプル次元を持つバッチ入力もそのまま流せる。

## 使い方
```python
from modules.Tensor import Tape, ParameterSet

params = ParameterSet()
w = params.add("w", np.ones((3, 2)))
with Tape() as tape:
    y = Dense.dense_forward(x, w, b, "tanh")
    loss = Gaussian.squared_error(y, target)
    tape.backward(loss)
print(w.grad)
```
"""

import threading
from collections import OrderedDict
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np


class ShapeError(ValueError):
    """テンソル形状の不一致"""


class Tensor:
    """numpy配列と勾配を持つノード

    Attributes:
        data (np.ndarray): 値（行優先）
        grad (Optional[np.ndarray]): 逆伝播で蓄積された勾配
        name (str): パラメータ名（中間値は空文字）
    """

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape})"


TensorLike = Union[Tensor, np.ndarray]


def value(x: TensorLike) -> np.ndarray:
    """Tensor でも配列でも値を取り出す"""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


_state = threading.local()


class Tape:
    """順伝播で記録した逆伝播クロージャを逆順に実行するテープ

    テープはスレッドごとに有効化される。
    """

    def __init__(self):
        self.records: List[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _state.stack.pop()

    def record(self, backward: Callable[[], None]) -> None:
        self.records.append(backward)

    def backward(self, loss: Tensor) -> None:
        """スカラー損失から全記録を逆順にたどって勾配を蓄積する"""
        if loss.data.size != 1:
            raise ShapeError(f"損失はスカラーである必要があります: {loss.shape}")
        loss.accumulate(np.ones_like(loss.data))
        for backward in reversed(self.records):
            backward()
        self.records.clear()


def active_tape() -> Optional[Tape]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def make_output(data: np.ndarray, inputs: Sequence[TensorLike]) -> TensorLike:
    """テープ記録中で入力に Tensor がある場合だけ Tensor を返す"""
    if active_tape() is not None and any(isinstance(x, Tensor) for x in inputs):
        return Tensor(data)
    return data


def grad_of(out: TensorLike) -> Optional[np.ndarray]:
    return out.grad if isinstance(out, Tensor) else None


def push(x: TensorLike, grad: np.ndarray) -> None:
    if isinstance(x, Tensor):
        x.accumulate(grad)


# ----------
# ---グルー演算（残差加算・連結・行の取り出し）
# ----------
def add(a: TensorLike, b: TensorLike) -> TensorLike:
    """要素ごとの和（b は a にブロードキャスト可能）"""
    av, bv = value(a), value(b)
    out = make_output(av + bv, (a, b))
    if isinstance(out, Tensor):

        def backward():
            g = out.grad
            if g is None:
                return
            push(a, g)
            if isinstance(b, Tensor):
                gb = g
                while gb.ndim > bv.ndim:
                    gb = gb.sum(axis=0)
                push(b, gb.reshape(bv.shape))

        active_tape().record(backward)
    return out


def concat(parts: Sequence[TensorLike], axis: int = -1) -> TensorLike:
    """最後の軸（または指定軸）で連結"""
    values = [value(p) for p in parts]
    out = make_output(np.concatenate(values, axis=axis), parts)
    if isinstance(out, Tensor):
        bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

        def backward():
            if out.grad is None:
                return
            for part, g in zip(parts, np.split(out.grad, bounds, axis=axis)):
                push(part, g)

        active_tape().record(backward)
    return out


def stack(parts: Sequence[TensorLike]) -> TensorLike:
    """先頭に新しい軸を作って積み重ねる"""
    out = make_output(np.stack([value(p) for p in parts]), parts)
    if isinstance(out, Tensor):

        def backward():
            if out.grad is None:
                return
            for i, part in enumerate(parts):
                push(part, out.grad[i])

        active_tape().record(backward)
    return out


def reshape(x: TensorLike, shape: Tuple[int, ...]) -> TensorLike:
    xv = value(x)
    out = make_output(xv.reshape(shape), (x,))
    if isinstance(out, Tensor):

        def backward():
            if out.grad is not None:
                push(x, out.grad.reshape(xv.shape))

        active_tape().record(backward)
    return out


def take(x: TensorLike, index, axis: int = 0) -> TensorLike:
    """指定軸の要素（スライス可）を取り出す"""
    xv = value(x)
    selector = [slice(None)] * xv.ndim
    selector[axis] = index
    selector = tuple(selector)
    out = make_output(xv[selector], (x,))
    if isinstance(out, Tensor):

        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(xv)
            g[selector] += out.grad
            push(x, g)

        active_tape().record(backward)
    return out


# ----------
# ---パラメータ集合
# ----------
class ParameterSet:
    """名前付きパラメータと同形状の勾配の集合"""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"パラメータ名が重複しています: {name}")
        tensor = Tensor(np.array(data, dtype=np.float64), name=name)
        tensor.zero_grad()
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params.keys())

    def zero_grad(self) -> None:
        for tensor in self:
            tensor.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in self)))

    def snapshot(self) -> Dict[str, np.ndarray]:
        """書き込み不可のコピー（推論用）"""
        result = {}
        for tensor in self:
            copied = tensor.data.copy()
            copied.setflags(write=False)
            result[tensor.name] = copied
        return result

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ParameterSet":
        params = cls()
        for name, data in arrays.items():
            params.add(name, data)
        return params
