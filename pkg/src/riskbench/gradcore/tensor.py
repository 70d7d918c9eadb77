"""Dense float64 tensors with a reverse-mode tape.

Every operation records its parents and a backward closure; the tape is
rebuilt on each forward pass. Gradients accumulate into leaf tensors that
were created with requires_grad=True, so repeated backward() calls without
zeroing add up. Single-threaded use of a graph is assumed.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf
from scipy.special import expit as _sigmoid


class ShapeError(ValueError):
    """Operand shapes do not conform; message names both shapes."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """A numpy float64 array plus the tape bookkeeping for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        # Leaves own a persistent accumulator; intermediates get one lazily.
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward = _backward

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Visits each recorded node exactly once in reverse topological
        order. Raises ShapeError if called on a non-scalar.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        # Fresh buffers for interior nodes only; leaves keep accumulating.
        for node in topo:
            if node._parents:
                node.grad = np.zeros_like(node.data)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return powc(self, exponent)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class ParamGraph:
    """Named parameter registry; the operation record lives on the tensors.

    Every parameter is a leaf Tensor with a same-shaped gradient buffer.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameter(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad[...] = 0.0

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in state")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {src.shape} vs live shape {t.data.shape}"
                )
            t.data[...] = src

    def __len__(self):
        return len(self.params)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    out._backward = bwd
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g, b.data.shape)

    out._backward = bwd
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = bwd
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

    out._backward = bwd
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul contraction mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a.grad += _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b.grad += _unbroadcast(gb, b.data.shape)

    out._backward = bwd
    return out


def powc(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)
    c = float(exponent)
    out = Tensor(a.data**c, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * c * a.data ** (c - 1.0)

    out._backward = bwd
    return out


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * out.data

    out._backward = bwd
    return out


def tlog(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g / a.data

    out._backward = bwd
    return out


def tsqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * 0.5 / out.data

    out._backward = bwd
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * (1.0 - out.data * out.data)

    out._backward = bwd
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * (a.data > 0.0)

    out._backward = bwd
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), computed stably; derivative is the logistic sigmoid."""
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * _sigmoid(a.data)

    out._backward = bwd
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_sigmoid(a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * out.data * (1.0 - out.data)

    out._backward = bwd
    return out


def terf(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_erf(a.data), _parents=(a,))
    two_over_sqrt_pi = 2.0 / np.sqrt(np.pi)

    def bwd(g):
        if a.requires_grad:
            a.grad += g * two_over_sqrt_pi * np.exp(-a.data * a.data)

    out._backward = bwd
    return out


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); gradient flows only where x > floor."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, floor), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * (a.data > floor)

    out._backward = bwd
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            a.grad += s * (g - inner)

    out._backward = bwd
    return out


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    se = e.sum(axis=axis, keepdims=True)
    val = m + np.log(se)
    out = Tensor(val if keepdims else np.squeeze(val, axis=axis), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axis=axis)
            a.grad += gg * (e / se)

    out._backward = bwd
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += np.broadcast_to(g, a.data.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis=axis)
            a.grad += np.broadcast_to(gg, a.data.shape)

    out._backward = bwd
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g.reshape(a.data.shape)

    out._backward = bwd
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.transpose(axes), _parents=(a,))
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a.grad += g.transpose(inv)

    out._backward = bwd
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad += g[tuple(idx)]

    out._backward = bwd
    return out


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = Tensor(y, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            a.grad += inv * (g - gm - y * gym)

    out._backward = bwd
    return out


def dropout(a, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * mask, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a.grad += g * mask

    out._backward = bwd
    return out


def sdpa(q, k, v) -> Tensor:
    """Scaled-dot-product attention over the last two axes of q, k, v."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scale = 1.0 / np.sqrt(q.data.shape[-1])
    scores = mul(matmul(q, transpose(k, _swap_last(k.data.ndim))), scale)
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
