"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Var` wraps an ``ndarray`` value.  Every operation records its
parents and a closure that maps the output gradient to one gradient per
parent.  :meth:`Var.backward` walks the graph in reverse topological order.
Values stay in whatever float dtype they were created with, so the same
graph runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np

from gazerefine.errors import ShapeError


_kink_log = None


class record_kinks:
    """Context manager collecting the branch pattern of every piecewise op.

    Two evaluations with equal patterns lie on the same smooth piece, which
    is what a finite-difference check needs.
    """

    def __enter__(self):
        global _kink_log
        self._saved, _kink_log = _kink_log, []
        return _kink_log

    def __exit__(self, *exc):
        global _kink_log
        _kink_log = self._saved
        return False


def _note(mask):
    if _kink_log is not None:
        _kink_log.append(np.packbits(mask.ravel()).tobytes())


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")
    # make ndarray (op) Var dispatch to the reflected Var operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=None, name=None):
        self.value = np.asarray(value)
        if self.value.dtype.kind != "f":
            self.value = self.value.astype(np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        if not requires_grad:
            # constant subgraphs need no bookkeeping
            self.parents, self.backward_fn = (), None
        self.grad = None
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, dtype={self.dtype})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it."""
        if grad is None:
            if self.value.size != 1:
                raise ShapeError("backward() without a seed needs a scalar", self.shape)
            grad = np.ones_like(self.value)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_var(x, dtype=None):
    if isinstance(x, Var):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64 if dtype is None else dtype)
    return Var(arr, requires_grad=False)


def parameter(value, name=None):
    return Var(np.array(value, copy=True), requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary_operands(a, b):
    a_is, b_is = isinstance(a, Var), isinstance(b, Var)
    if a_is and not b_is:
        b = as_var(np.asarray(b, dtype=a.dtype))
    elif b_is and not a_is:
        a = as_var(np.asarray(a, dtype=b.dtype))
    elif not a_is and not b_is:
        a, b = as_var(a), as_var(b)
    return a, b


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes do not broadcast", a.shape, b.shape) from None


# elementwise arithmetic

def add(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Var(a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Var(a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return Var(a.value * b.value, (a, b), backward)


def div(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def backward(g):
        ga = _unbroadcast(g / b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.value, b.shape) if b.requires_grad else None
        return ga, gb

    return Var(out, (a, b), backward)


def neg(a):
    return Var(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float):
    a = as_var(a)
    out = a.value ** exponent
    return Var(out, (a,), lambda g: (g * exponent * a.value ** (exponent - 1),))


def square(a):
    a = as_var(a)
    return Var(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def maximum(a, floor: float):
    """``max(a, floor)`` with gradient passed only where ``a > floor``."""
    a = as_var(a)
    mask = a.value > floor
    _note(mask)
    return Var(np.where(mask, a.value, floor).astype(a.dtype), (a,), lambda g: (g * mask,))


def clip(a, low: float, high: float):
    a = as_var(a)
    mask = (a.value >= low) & (a.value <= high)
    _note(mask)
    _note(a.value >= low)
    return Var(np.clip(a.value, low, high), (a,), lambda g: (g * mask,))


# unary functions

def exp(a):
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_var(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a):
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a):
    a = as_var(a)
    return Var(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a):
    a = as_var(a)
    return Var(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def abs_(a):
    a = as_var(a)
    _note(a.value > 0)
    return Var(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def arccos(a, eps: float = 1e-12):
    """arccos; the derivative denominator is floored at ``sqrt(eps)``."""
    a = as_var(a)

    def backward(g):
        return (-g / np.sqrt(np.maximum(1.0 - a.value ** 2, eps)),)

    return Var(np.arccos(a.value), (a,), backward)


def arcsin(a, eps: float = 1e-12):
    a = as_var(a)

    def backward(g):
        return (g / np.sqrt(np.maximum(1.0 - a.value ** 2, eps)),)

    return Var(np.arcsin(a.value), (a,), backward)


def arctan2(y, x):
    y, x = _binary_operands(y, x)
    r2 = x.value ** 2 + y.value ** 2

    def backward(g):
        gy = _unbroadcast(g * x.value / r2, y.shape) if y.requires_grad else None
        gx = _unbroadcast(-g * y.value / r2, x.shape) if x.requires_grad else None
        return gy, gx

    return Var(np.arctan2(y.value, x.value), (y, x), backward)


def tanh(a):
    a = as_var(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_var(a)
    # split by sign so exp never overflows
    v = a.value
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype)
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_var(a)
    mask = a.value > 0
    _note(mask)
    return Var(a.value * mask, (a,), lambda g: (g * mask,))


def softplus(a):
    """``log(1 + exp(a))`` computed without overflow."""
    a = as_var(a)
    v = a.value
    out = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
    sig = sigmoid(as_var(v)).value
    return Var(out, (a,), lambda g: (g * sig,))


# reductions and shape manipulation

def sum_(a, axis=None, keepdims=False):
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Var(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_var(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / count)


def max_value(a, axis=None, keepdims=False):
    """Plain numpy max, detached from the graph (used for stabilising shifts)."""
    return np.max(as_var(a).value, axis=axis, keepdims=keepdims)


def reshape(a, shape):
    a = as_var(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("cannot reshape", a.shape, shape) from None
    return Var(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_var(a)
    out = np.transpose(a.value, axes)
    inverse = None if axes is None else np.argsort(axes)
    return Var(out, (a,), lambda g: (np.transpose(g, inverse),))


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)


def getitem(a, index):
    a = as_var(a)
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.value)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Var(a.value[index], (a,), backward)


def take_time(a, t: int):
    """``a[:, t]`` for a batch-major sequence tensor (cheap basic slicing)."""
    a = as_var(a)

    def backward(g):
        full = np.zeros_like(a.value)
        full[:, t] = g
        return (full,)

    return Var(a.value[:, t], (a,), backward)


def concat(items, axis=-1):
    items = [as_var(x) for x in items]
    ref = list(items[0].shape)
    ax = axis % len(ref)
    for it in items[1:]:
        other = list(it.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != ax):
            raise ShapeError("concat: incompatible shapes", items[0].shape, it.shape)
    sizes = [it.shape[ax] for it in items]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return Var(np.concatenate([it.value for it in items], axis=ax), tuple(items), backward)


def stack(items, axis=0):
    items = [as_var(x) for x in items]
    for it in items[1:]:
        if it.shape != items[0].shape:
            raise ShapeError("stack: shapes differ", items[0].shape, it.shape)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Var(np.stack([it.value for it in items], axis=axis), tuple(items), backward)


def matmul(a, b):
    a, b = _binary_operands(a, b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError("matmul: inner dimensions differ", a.shape, b.shape)
    if b.ndim != 2:
        raise ShapeError("matmul: right operand must be a matrix", b.shape)

    def backward(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.value.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Var(a.value @ b.value, (a, b), backward)


def where(mask, a, b):
    """Select ``a`` where ``mask`` else ``b``; mask is a constant array."""
    a, b = _binary_operands(a, b)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        ga = _unbroadcast(np.where(mask, g, 0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(mask, 0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return Var(np.where(mask, a.value, b.value), (a, b), backward)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_var(a)
    shift = np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(a.value - shift)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + shift
    soft = e / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return Var(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


def softmax(a, axis=-1):
    a = as_var(a)
    shift = np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(a.value - shift)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Var(out, (a,), backward)
