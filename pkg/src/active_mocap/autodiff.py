"""Minimal reverse-mode automatic differentiation on numpy arrays.

Just enough ops for the policy network and its losses: dense layers, a
gated recurrent cell, mixture-density heads, categorical actors, PPO
surrogates.  Gradients are checked against central finite differences in
the test suite; that check is the contract.
"""

import numpy as np


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    # -- graph traversal -----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.backward_fn is not None:
                node.backward_fn(node.grad)

    def _accum(self, grad):
        grad = _unbroadcast(np.asarray(grad), self.data.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))
        def back(g):
            self._accum(g)
            other._accum(g)
        out.backward_fn = back
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data - other.data, (self, other))
        def back(g):
            self._accum(g)
            other._accum(-g)
        out.backward_fn = back
        return out

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))
        def back(g):
            self._accum(g * other.data)
            other._accum(g * self.data)
        out.backward_fn = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, (self, other))
        def back(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / (other.data * other.data))
        out.backward_fn = back
        return out

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out.backward_fn = lambda g: self._accum(-g)
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, (self, other))
        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)
        out.backward_fn = back
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], (self,))
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accum(full)
        out.backward_fn = back
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))
        out.backward_fn = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out.backward_fn = lambda g: self._accum(g.reshape(self.data.shape))
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def parameter(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# -- elementwise nonlinearities ----------------------------------------------

def tanh(t):
    y = np.tanh(t.data)
    out = Tensor(y, (t,))
    out.backward_fn = lambda g: t._accum(g * (1.0 - y * y))
    return out


def sigmoid(t):
    y = 1.0 / (1.0 + np.exp(-np.clip(t.data, -60, 60)))
    out = Tensor(y, (t,))
    out.backward_fn = lambda g: t._accum(g * y * (1.0 - y))
    return out


def exp(t):
    y = np.exp(t.data)
    out = Tensor(y, (t,))
    out.backward_fn = lambda g: t._accum(g * y)
    return out


def log(t):
    out = Tensor(np.log(t.data), (t,))
    out.backward_fn = lambda g: t._accum(g / t.data)
    return out


def square(t):
    out = Tensor(t.data * t.data, (t,))
    out.backward_fn = lambda g: t._accum(g * 2.0 * t.data)
    return out


def softplus(t):
    # stable: max(x, 0) + log1p(exp(-|x|))
    x = t.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(y, (t,))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))
    out.backward_fn = lambda g: t._accum(g * sig)
    return out


# -- structural ops ------------------------------------------------------------

def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]
    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)
    out.backward_fn = back
    return out


def logsumexp(t, axis=-1, keepdims=False):
    m = t.data.max(axis=axis, keepdims=True)
    y = m + np.log(np.exp(t.data - m).sum(axis=axis, keepdims=True))
    soft = np.exp(t.data - y)
    out = Tensor(y if keepdims else np.squeeze(y, axis=axis), (t,))
    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        t._accum(g * soft)
    out.backward_fn = back
    return out


def log_softmax(t, axis=-1):
    return t - logsumexp(t, axis=axis, keepdims=True)


def gather(t, index, axis=-1):
    """take_along_axis with an integer index array (no gradient to index)."""
    idx = np.asarray(index)
    out = Tensor(np.take_along_axis(t.data, idx, axis=axis), (t,))
    def back(g):
        full = np.zeros_like(t.data)
        np.put_along_axis(full, idx, g, axis=axis)  # indices within a slice are unique
        t._accum(full)
    out.backward_fn = back
    return out


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data >= b.data
    out = Tensor(np.where(mask, a.data, b.data), (a, b))
    def back(g):
        a._accum(g * mask)
        b._accum(g * ~mask)
    out.backward_fn = back
    return out


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data <= b.data
    out = Tensor(np.where(mask, a.data, b.data), (a, b))
    def back(g):
        a._accum(g * mask)
        b._accum(g * ~mask)
    out.backward_fn = back
    return out


def clip(t, lo, hi):
    inside = (t.data >= lo) & (t.data <= hi)
    out = Tensor(np.clip(t.data, lo, hi), (t,))
    out.backward_fn = lambda g: t._accum(g * inside)
    return out


def where(cond, a, b):
    """cond is a plain boolean array, not differentiated."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data), (a, b))
    def back(g):
        a._accum(g * cond)
        b._accum(g * ~cond)
    out.backward_fn = back
    return out


def detach(t):
    return Tensor(t.data.copy())


# -- optimizer ----------------------------------------------------------------

class Adam:
    """Adam with global-norm gradient clipping."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, grad_clip=None):
        if not isinstance(params, dict):
            params = {i: p for i, p in enumerate(params)}
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.grad_clip:
                scale = self.grad_clip / (total + 1e-12)
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
