"""Minimal reverse-mode autodiff over 2-D float64 tensors.

Ops execute eagerly through the kernel backend and, when a Tape is active,
append a backward rule; Tape.backward replays the rules in exact reverse
recording order. A fresh tape is used per forward pass. Code that must stay
outside autodiff (frozen embeddings) simply runs with no tape active.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .errors import LabelError, NonFiniteError, ShapeError, TapeError

BCE_EPS = 1e-12  # score clamp inside binary cross-entropy
L2_EPS = 1e-12  # row-norm floor inside l2_normalize_rows

_TAPES: list["Tape"] = []


def _as_matrix(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D; got {arr.ndim}-D data of shape {arr.shape}")
    return arr


class Tensor:
    """2-D row-major float64 value, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_matrix(data)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.rows}x{self.cols}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accum_grad(self, arr: np.ndarray) -> None:
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite gradient for tensor of shape {self.data.shape}")
        self.grad = arr.copy() if self.grad is None else self.grad + arr

    def __repr__(self) -> str:
        return f"Tensor({self.rows}x{self.cols}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class Tape:
    """Ordered record of executed ops; gradients flow in reverse record order."""

    def __init__(self):
        # (op name, input tensor ids, output tensor id, backward rule)
        self.nodes: list[tuple[str, tuple[int, ...], int, Callable[[], None]]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def _record(self, name: str, inputs: Sequence[Tensor], out: Tensor, fn: Callable[[], None]) -> None:
        self.nodes.append((name, tuple(id(t) for t in inputs), id(out), fn))

    def backward(self, loss: Tensor) -> None:
        if self._used:
            raise TapeError("tape already consumed by a previous backward()")
        if loss.shape != (1, 1):
            raise TapeError(f"backward() needs a 1x1 loss, got {loss.rows}x{loss.cols}")
        self._used = True
        loss.grad = np.ones((1, 1))
        for _name, _ins, _out, fn in reversed(self.nodes):
            fn()


def _active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def _make_out(data: np.ndarray, name: str, inputs: Sequence[Tensor], backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape._record(name, inputs, out, backward(out))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dims differ, a is {a.rows}x{a.cols}, b is {b.rows}x{b.cols}")

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(K.matmul_nt(g, b.data))
            if b.requires_grad:
                b._accum_grad(K.matmul_tn(a.data, g))

        return fn

    return _make_out(K.matmul(a.data, b.data), "matmul", (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    bias_row = b.shape != a.shape and b.rows == 1 and b.cols == a.cols
    if b.shape != a.shape and not bias_row:
        raise ShapeError(f"add: a is {a.rows}x{a.cols}, b is {b.rows}x{b.cols}")

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g)
            if b.requires_grad:
                b._accum_grad(K.bias_grad(g) if bias_row else g)

        return fn

    data = K.add_bias(a.data, b.data) if bias_row else a.data + b.data
    return _make_out(data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: a is {a.rows}x{a.cols}, b is {b.rows}x{b.cols}")

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g)
            if b.requires_grad:
                b._accum_grad(-g)

        return fn

    return _make_out(a.data - b.data, "sub", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: a is {a.rows}x{a.cols}, b is {b.rows}x{b.cols}")

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g * b.data)
            if b.requires_grad:
                b._accum_grad(g * a.data)

        return fn

    return _make_out(a.data * b.data, "mul", (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is not None and a.requires_grad:
                a._accum_grad(g * k)

        return fn

    return _make_out(a.data * k, "scale", (a,), backward)


def relu(a: Tensor) -> Tensor:
    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is not None and a.requires_grad:
                a._accum_grad(K.relu_grad(a.data, g))

        return fn

    return _make_out(K.relu(a.data), "relu", (a,), backward)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale every row to unit L2 norm (rows below the eps floor divide by eps)."""
    data, norms = K.l2rows(a.data, L2_EPS)

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is not None and a.requires_grad:
                a._accum_grad(K.l2rows_grad(out.data, norms, g, L2_EPS))

        return fn

    return _make_out(data, "l2_normalize_rows", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = K.sigmoid(a.data)

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is not None and a.requires_grad:
                a._accum_grad(K.sigmoid_grad(out.data, g))

        return fn

    return _make_out(data, "sigmoid", (a,), backward)


def _check_labels(labels, n_classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise LabelError(f"labels must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(np.int64)):
            raise LabelError("labels must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise LabelError(f"label out of range [0, {n_classes}): min={arr.min()}, max={arr.max()}")
    return arr


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over rows; labels are class indices into columns."""
    y = _check_labels(labels, logits.cols)
    if y.size != logits.rows:
        raise ShapeError(f"softmax_cross_entropy: {logits.rows} rows but {y.size} labels")
    loss, probs = K.softmax_xent(logits.data, y)
    m = logits.rows

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is not None and logits.requires_grad:
                logits._accum_grad(K.softmax_xent_grad(probs, y, float(g[0, 0]) / m))

        return fn

    return _make_out(np.array([[loss]]), "softmax_cross_entropy", (logits,), backward)


def binary_cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean BCE; scores are a (m,1) column in (0,1), labels in {0,1}."""
    if scores.cols != 1:
        raise ShapeError(f"binary_cross_entropy: scores must be (m,1), got {scores.rows}x{scores.cols}")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size != scores.rows:
        raise ShapeError(f"binary_cross_entropy: {scores.rows} scores but {y.size} labels")
    if y.size and not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError("binary labels must be 0 or 1")
    loss, clamped = K.bce(scores.data, y, BCE_EPS)
    m = scores.rows

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if g is not None and scores.requires_grad:
                scores._accum_grad(K.bce_grad(clamped, y, float(g[0, 0]) / m))

        return fn

    return _make_out(np.array([[loss]]), "binary_cross_entropy", (scores,), backward)
