"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every value in a computation graph is a `Node` wrapping a numpy array.
Operations build the graph eagerly; `backward` on a scalar node fills in
`grad` for every node with `requires_grad` reachable from it.  All math is
64-bit; any NaN/Inf produced by an op raises `NumericError` immediately,
tagged with the op that produced it.
"""

from __future__ import annotations

import numpy as np


class NumericError(RuntimeError):
    """A forward or backward op produced a non-finite value."""

    def __init__(self, op, message="non-finite value"):
        super().__init__(f"{message} in op '{op}'")
        self.op = op


class ContractViolation(ValueError):
    """An operation was called outside its contract (shape/scalar-ness)."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One value in the graph: array, op tag, parents, and backward rule."""

    __slots__ = ("value", "op", "parents", "_backward", "grad", "requires_grad")

    def __init__(self, value, op="leaf", parents=(), backward=None, requires_grad=False):
        value = _as_array(value)
        if not np.all(np.isfinite(value)):
            raise NumericError(op)
        self.value = value
        self.op = op
        self.parents = parents
        self._backward = backward
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    # ---- graph construction helpers -------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Node) else Node(x)

    def __add__(self, other):
        other = Node._lift(other)
        out = Node(self.value + other.value, "add", (self, other))

        def bwd(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Node(-self.value, "neg", (self,))
        out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        other = Node._lift(other)
        out = Node(self.value - other.value, "sub", (self, other))

        def bwd(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))

        out._backward = bwd
        return out

    def __rsub__(self, other):
        return Node._lift(other) - self

    def __mul__(self, other):
        other = Node._lift(other)
        out = Node(self.value * other.value, "mul", (self, other))

        def bwd(g):
            return (
                _unbroadcast(g * other.value, self.shape),
                _unbroadcast(g * self.value, other.shape),
            )

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Node._lift(other)
        out = Node(self.value / other.value, "div", (self, other))

        def bwd(g):
            return (
                _unbroadcast(g / other.value, self.shape),
                _unbroadcast(-g * self.value / other.value**2, other.shape),
            )

        out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return Node._lift(other) / self

    def __pow__(self, p):
        assert isinstance(p, (int, float))
        out = Node(self.value**p, "pow", (self,))
        out._backward = lambda g: (g * p * self.value ** (p - 1),)
        return out

    def matmul(self, other):
        other = Node._lift(other)
        out = Node(self.value @ other.value, "matmul", (self, other))

        def bwd(g):
            a, b = self.value, other.value
            if a.ndim == 1 and b.ndim == 2:
                return (g @ b.T, np.outer(a, g))
            if a.ndim == 2 and b.ndim == 1:
                return (np.outer(g, b), a.T @ g)
            if a.ndim == 1 and b.ndim == 1:
                return (g * b, g * a)
            ga = _unbroadcast(g @ b.swapaxes(-1, -2), a.shape)
            gb = _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape)
            return (ga, gb)

        out._backward = bwd
        return out

    __matmul__ = matmul

    def __getitem__(self, idx):
        out = Node(self.value[idx], "slice", (self,))

        def bwd(g):
            full = np.zeros_like(self.value)
            np.add.at(full, idx, g)
            return (full,)

        out._backward = bwd
        return out

    # ---- unary math ------------------------------------------------------

    def tanh(self):
        t = np.tanh(self.value)
        out = Node(t, "tanh", (self,))
        out._backward = lambda g: (g * (1.0 - t * t),)
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.value))
        out = Node(s, "sigmoid", (self,))
        out._backward = lambda g: (g * s * (1.0 - s),)
        return out

    def relu(self):
        mask = self.value > 0
        out = Node(self.value * mask, "relu", (self,))
        out._backward = lambda g: (g * mask,)
        return out

    def exp(self):
        e = np.exp(self.value)
        out = Node(e, "exp", (self,))
        out._backward = lambda g: (g * e,)
        return out

    def log(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = Node(np.log(self.value), "log", (self,))
        out._backward = lambda g: (g / self.value,)
        return out

    def softplus(self):
        # log(1 + e^x), stable for large |x|
        v = self.value
        sp = np.logaddexp(0.0, v)
        out = Node(sp, "softplus", (self,))
        out._backward = lambda g: (g / (1.0 + np.exp(-v)),)
        return out

    def square(self):
        out = Node(self.value * self.value, "square", (self,))
        out._backward = lambda g: (g * 2.0 * self.value,)
        return out

    def clamp(self, lo, hi):
        """Hard clamp; gradient is zero outside [lo, hi]."""
        mask = (self.value >= lo) & (self.value <= hi)
        out = Node(np.clip(self.value, lo, hi), "clamp", (self,))
        out._backward = lambda g: (g * mask,)
        return out

    # ---- reductions / reshaping -----------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Node(self.value.sum(axis=axis, keepdims=keepdims), "sum", (self,))

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, self.shape).copy(),)

        out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out = Node(self.value.reshape(*shape), "reshape", (self,))
        out._backward = lambda g: (g.reshape(self.shape),)
        return out

    def detach(self):
        """Cut the graph: same value, no parents, no gradient flow."""
        return Node(self.value, "detach")


def concat(nodes, axis=-1):
    nodes = [Node._lift(n) for n in nodes]
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), "concat", tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def minimum(a, b):
    """Elementwise min; gradient routes to the smaller input (ties to `a`)."""
    a, b = Node._lift(a), Node._lift(b)
    take_a = a.value <= b.value
    out = Node(np.where(take_a, a.value, b.value), "minimum", (a, b))

    def bwd(g):
        return (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        )

    out._backward = bwd
    return out


def stack(nodes, axis=0):
    nodes = [Node._lift(n) for n in nodes]
    out = Node(np.stack([n.value for n in nodes], axis=axis), "stack", tuple(nodes))

    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    out._backward = bwd
    return out


def backward(loss):
    """Backpropagate from a scalar `loss`, filling `grad` on the graph.

    Returns the list of visited nodes (topological order, loss last) so a
    caller can harvest gradients before they are dropped.
    """
    if loss.value.size != 1:
        raise ContractViolation("backward requires a scalar loss")

    # iterative topological sort (graphs can be 10k+ nodes deep for RNNs)
    topo, visited = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in visited and p.requires_grad:
                stack_.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(node.op, "non-finite gradient")
            # backward rules never mutate in place, so sharing is safe
            parent.grad = g if parent.grad is None else parent.grad + g
    return topo
