"""Minimal reverse-mode autodiff on float64 numpy arrays.

Every trainable component in this package runs on the `Tensor` class below.
The op set is deliberately small: elementwise arithmetic, matmul, a strided
1-D convolution, reductions, and numerically stable (log-)softmax. Backward
functions accumulate into `.grad`; graphs are pruned eagerly, so constants
(e.g. frozen-encoder outputs) never appear on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded tape."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _node(value, parents: tuple[Tensor, ...], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=parents, backward=backward)
    return Tensor(value)


# -- elementwise and linear algebra --------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_value = a.value + b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.value.shape))

    return _node(out_value, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_value = a.value - b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _node(out_value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_value = a.value * b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _node(out_value, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_value = a.value / b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _node(out_value, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out_value = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.value.T)
        if b.requires_grad:
            _accumulate(b, a.value.T @ g)

    return _node(out_value, (a, b), backward)


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    out_value = a.value**exponent

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * exponent * a.value ** (exponent - 1))

    return _node(out_value, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_value = np.tanh(a.value)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - out_value * out_value))

    return _node(out_value, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    out_value = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * out_value * (1.0 - out_value))

    return _node(out_value, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_value = np.exp(a.value)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * out_value)

    return _node(out_value, (a,), backward)


def log(a: Tensor) -> Tensor:
    out_value = np.log(a.value)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g / a.value)

    return _node(out_value, (a,), backward)


# -- reductions -----------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape).copy())
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_exp, a.value.shape).copy())

    return _node(out_value, (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- softmax family --------------------------------------------------------


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_value = shifted - lse

    def backward(g):
        if a.requires_grad:
            p = np.exp(out_value)
            _accumulate(a, g - p * g.sum(axis=axis, keepdims=True))

    return _node(out_value, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_value = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out_value).sum(axis=axis, keepdims=True)
            _accumulate(a, out_value * (g - inner))

    return _node(out_value, (a,), backward)


# -- shape ops --------------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out_value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + size)
                _accumulate(t, g[tuple(sl)])
            start += size

    return _node(out_value, tuple(tensors), backward)


def getitem(a: Tensor, key) -> Tensor:
    out_value = a.value[key]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.value)
            buf[key] += g
            _accumulate(a, buf)

    return _node(out_value, (a,), backward)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather (embedding lookup); duplicate rows accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    out_value = a.value[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.value)
            np.add.at(buf, idx, g)
            _accumulate(a, buf)

    return _node(out_value, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out_value = a.value.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.value.shape))

    return _node(out_value, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    out_value = a.value.transpose(axes)

    def backward(g):
        if a.requires_grad:
            if axes is None:
                _accumulate(a, g.transpose())
            else:
                inverse = np.argsort(axes)
                _accumulate(a, g.transpose(inverse))

    return _node(out_value, (a,), backward)


# -- convolution -------------------------------------------------------------


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int) -> Tensor:
    """Strided 1-D convolution over a time-major sequence.

    x: (T, C_in), w: (C_out, C_in, K), b: (C_out,). Output is
    (floor((T + 2*padding - K)/stride) + 1, C_out).
    """
    t_in, c_in = x.value.shape
    c_out, c_in_w, k = w.value.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ValueError("conv1d input too short for kernel/stride/padding")
    xpad = np.zeros((t_in + 2 * padding, c_in), dtype=np.float64)
    xpad[padding:padding + t_in] = x.value
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    patches = xpad[idx]  # (T_out, K, C_in)
    out_value = np.tensordot(patches, w.value, axes=([1, 2], [2, 1])) + b.value

    def backward(g):
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))
        if w.requires_grad:
            dw = np.tensordot(g, patches, axes=(0, 0))  # (C_out, K, C_in)
            _accumulate(w, dw.transpose(0, 2, 1))
        if x.requires_grad:
            dpatches = np.tensordot(g, w.value, axes=(1, 0))  # (T_out, C_in, K)
            dxpad = np.zeros_like(xpad)
            np.add.at(dxpad, idx, dpatches.transpose(0, 2, 1))
            _accumulate(x, dxpad[padding:padding + t_in])

    return _node(out_value, (x, w, b), backward)


# -- parameters and optimization ---------------------------------------------


def parameter(value, rng: np.random.Generator | None = None, fan_in: int | None = None, shape=None) -> Tensor:
    """Create a trainable leaf. With rng/fan_in/shape, draw uniform fan-in init."""
    if rng is not None:
        bound = 1.0 / np.sqrt(fan_in)
        value = rng.uniform(-bound, bound, size=shape)
    return Tensor(value, requires_grad=True)


def zero_grads(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.grad = None


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


@dataclass
class AdamState:
    """First/second moment buffers for adaptive-moment gradient descent."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    step_size: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place adaptive-moment update on every param with a gradient."""
    b1, b2 = betas
    state.t += 1
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, t in params.items():
        if t.grad is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(t.value))
        v = state.v.setdefault(name, np.zeros_like(t.value))
        m *= b1
        m += (1.0 - b1) * t.grad
        v *= b2
        v += (1.0 - b2) * t.grad * t.grad
        t.value -= step_size * (m / bias1) / (np.sqrt(v / bias2) + eps)
