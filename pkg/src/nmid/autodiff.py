"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Just enough ops for the micrograph encoder and its contrastive loss:
broadcasting arithmetic, batched matmul, reshape/transpose/concat/slicing,
softmax, logsumexp and gelu. Gradients accumulate into ``Tensor.grad``
after calling ``backward()`` on a scalar.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.requires_grad:
                node._backward()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, self.requires_grad or other.requires_grad)
        out._parents = (self, other)

        def _backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.data.shape))

        out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, self.requires_grad or other.requires_grad)
        out._parents = (self, other)

        def _backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, self.requires_grad or other.requires_grad)
        out._parents = (self, other)

        def _backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad / other.data, self.data.shape))
            if other.requires_grad:
                g = -out.grad * self.data / (other.data * other.data)
                other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = _backward
        return out

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, self.requires_grad)
        out._parents = (self,)

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))

        out._backward = _backward
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, self.requires_grad or other.requires_grad)
        out._parents = (self, other)

        def _backward():
            if self.requires_grad:
                g = out.grad @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                g = np.swapaxes(self.data, -1, -2) @ out.grad
                other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = _backward
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), self.requires_grad)
        out._parents = (self,)

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.data.shape))

        out._backward = _backward
        return out

    def transpose(self, *axes):
        out = Tensor(self.data.transpose(*axes), self.requires_grad)
        out._parents = (self,)
        inverse = np.argsort(axes)

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad.transpose(*inverse))

        out._backward = _backward
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], self.requires_grad)
        out._parents = (self,)

        def _backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                np.add.at(g, key, out.grad)
                self._accumulate(g)

        out._backward = _backward
        return out

    # -- reductions & nonlinearities ----------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), self.requires_grad)
        out._parents = (self,)

        def _backward():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        out = Tensor(np.exp(self.data), self.requires_grad)
        out._parents = (self,)

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad * out.data)

        out._backward = _backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), self.requires_grad)
        out._parents = (self,)

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)

        out._backward = _backward
        return out

    def sqrt(self):
        return self ** 0.5


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        any(t.requires_grad for t in tensors),
    )
    out._parents = tuple(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * out.grad.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(index)])

    out._backward = _backward
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; -inf inputs give exactly-zero weights."""
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, t.requires_grad)
    out._parents = (t,)

    def _backward():
        if t.requires_grad:
            g = out.grad * p
            t._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    out._backward = _backward
    return out


def logsumexp(t: Tensor, axis: int = -1) -> Tensor:
    """log(sum(exp(t))) along axis, stable for rows containing -inf."""
    m = t.data.max(axis=axis, keepdims=True)
    e = np.exp(t.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = Tensor(np.squeeze(m + np.log(s), axis=axis), t.requires_grad)
    out._parents = (t,)
    weights = e / s  # softmax(t): exact gradient of logsumexp

    def _backward():
        if t.requires_grad:
            t._accumulate(np.expand_dims(out.grad, axis) * weights)

    out._backward = _backward
    return out


def gelu(t: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form (smooth everywhere)."""
    phi = 0.5 * (1.0 + erf(t.data * _INV_SQRT2))
    out = Tensor(t.data * phi, t.requires_grad)
    out._parents = (t,)

    def _backward():
        if t.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * t.data * t.data)
            t._accumulate(out.grad * (phi + t.data * pdf))

    out._backward = _backward
    return out


def layer_norm(t: Tensor, scale: Tensor, offset: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = t.mean(axis=-1, keepdims=True)
    centered = t - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * scale + offset
