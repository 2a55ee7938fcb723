"""Minimal reverse-mode automatic differentiation over numpy arrays.

Covers exactly the operations the policy/value network needs: broadcast
arithmetic, matrix multiplication (including batched), tanh/exp/log, fused
(masked) softmax and log-softmax, reductions, reshaping, concatenation,
gathering, and hard clipping.  Gradients accumulate into `.grad` on tensors
created with requires_grad=True after calling backward() on a scalar.

Float64 throughout; a module-level switch disables graph construction for
rollout-time inference (`with no_grad(): ...`).
"""

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that skips building the backward graph."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite loss: %r" % self.data)
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(out, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, grad):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad, shape):
    """Sum a gradient over the dimensions numpy broadcast to produce it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _track(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _track(out, (a, b), backward)


def _mm(x, y):
    """Matmul with a fast path collapsing stacked left operands against a 2-D
    right operand into one GEMM."""
    if x.ndim > 2 and y.ndim == 2:
        lead = x.shape[:-1]
        return (x.reshape(-1, x.shape[-1]) @ y).reshape(lead + (y.shape[1],))
    return x @ y


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(_mm(a.data, b.data))

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(_mm(g, b.data.swapaxes(-1, -2)), a.data.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and g.ndim > 2:
                ga = a.data.reshape(-1, a.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                _accumulate(b, ga)
            else:
                _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _track(out, (a, b), backward)


def linear(x, w, b):
    """Fused x @ w + b with the same fast GEMM path."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out = Tensor(_mm(x.data, w.data) + b.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, _mm(g, w.data.swapaxes(-1, -2)))
        if w.requires_grad:
            _accumulate(w, x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _track(out, (x, w, b), backward)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _track(out, (a,), backward)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)

    def backward(g):
        _accumulate(a, g * y)

    return _track(out, (a,), backward)


def log(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.data))

    def backward(g):
        _accumulate(a, g / a.data)

    return _track(out, (a,), backward)


def square(a):
    a = as_tensor(a)
    out = Tensor(a.data * a.data)

    def backward(g):
        _accumulate(a, 2.0 * g * a.data)

    return _track(out, (a,), backward)


def clip(a, lo, hi):
    """Hard clamp; gradient is zero outside the open interval (lo, hi)."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _track(out, (a,), backward)


def minimum(a, b):
    """Elementwise minimum; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def backward(g):
        _accumulate(a, _unbroadcast(g * take_a, a.data.shape))
        _accumulate(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _track(out, (a, b), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _track(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _track(out, (a,), backward)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, ax1, ax2))

    def backward(g):
        _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _track(out, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _track(out, tuple(tensors), backward)


def getitem(a, key):
    a = as_tensor(a)
    out = Tensor(a.data[key])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accumulate(a, full)

    return _track(out, (a,), backward)


def gather_last(a, index):
    """Select one entry per row along the last axis: out[..., 0] = a[..., idx]."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1))

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g, axis=-1)
        _accumulate(a, full)

    return _track(out, (a,), backward)


def softmax(a, axis=-1, mask=None):
    """Numerically-stable softmax; masked entries get exactly zero probability
    and receive zero gradient.  `mask` is a constant boolean array broadcast
    against `a`."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(x - mx)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom > 0.0, denom, 1.0)
    out = Tensor(y)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - inner))

    return _track(out, (a,), backward)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    mx = np.max(a.data, axis=axis, keepdims=True)
    shifted = a.data - mx
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def backward(g):
        _accumulate(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _track(out, (a,), backward)
