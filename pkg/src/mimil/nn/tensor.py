"""Dense tensors with reverse-mode differentiation.

Every op builds its output eagerly and, when any input requires a gradient,
records a closure that pushes the output gradient back to its inputs.
Reductions accumulate in float64 whatever the storage dtype.
"""
from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ParameterError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, finite differences)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ParameterError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        _accumulate(self, np.asarray(grad, dtype=self.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar for tests and small expressions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check(cond, op, *shapes):
    if not cond:
        raise ShapeError(op, *shapes)


# -- linear maps -----------------------------------------------------------

def linear(x, W, b=None) -> Tensor:
    """y = x W + b over the last axis; leading axes are batch axes."""
    x, W = as_tensor(x), as_tensor(W)
    _check(W.ndim == 2 and x.shape[-1] == W.shape[0], "linear", x.shape, W.shape)
    if b is not None:
        b = as_tensor(b)
        _check(b.shape == (W.shape[1],), "linear bias", b.shape, (W.shape[1],))
    y = x.data @ W.data
    if b is not None:
        y = y + b.data
    d_in, d_out = W.shape

    def backward(g):
        _accumulate(x, g @ W.data.T)
        g2 = g.reshape(-1, d_out)
        _accumulate(W, x.data.reshape(-1, d_in).T @ g2)
        if b is not None:
            _accumulate(b, g2.sum(axis=0, dtype=np.float64).astype(b.dtype))

    parents = (x, W) if b is None else (x, W, b)
    return _result(y, parents, backward)


def pointwise_conv(x, W, b=None) -> Tensor:
    """Kernel-size-1 convolution: y[..., :, n] = W x[..., :, n] + b."""
    x, W = as_tensor(x), as_tensor(W)
    _check(W.ndim == 2 and x.ndim >= 2 and x.shape[-2] == W.shape[1], "pointwise_conv", x.shape, W.shape)
    if b is not None:
        b = as_tensor(b)
        _check(b.shape == (W.shape[0],), "pointwise_conv bias", b.shape, (W.shape[0],))
    y = np.matmul(W.data, x.data)
    if b is not None:
        y = y + b.data[:, None]

    def backward(g):
        _accumulate(x, np.matmul(W.data.T, g))
        gw = np.moveaxis(g, -2, 0).reshape(W.shape[0], -1) @ np.moveaxis(x.data, -2, 0).reshape(W.shape[1], -1).T
        _accumulate(W, gw.astype(W.dtype, copy=False))
        if b is not None:
            axes = tuple(i for i in range(g.ndim) if i != g.ndim - 2)
            _accumulate(b, g.sum(axis=axes, dtype=np.float64).astype(b.dtype))

    parents = (x, W) if b is None else (x, W, b)
    return _result(y, parents, backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product; batch axes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    _check(a.ndim >= 2 and a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]
           and a.shape[-1] == b.shape[-2], "matmul", a.shape, b.shape)
    y = np.matmul(a.data, b.data)

    def backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(y, (a, b), backward)


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(a.shape == b.shape, "add", a.shape, b.shape)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(a.shape == b.shape, "mul", a.shape, b.shape)

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, g * c)

    return _result(x.data * c, (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1 - y * y))

    return _result(y, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)

    def backward(g):
        _accumulate(x, g * y * (1 - y))

    return _result(y, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically shifted softmax; normalizers are accumulated in float64."""
    x = as_tensor(x)
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = (z / z.sum(axis=axis, keepdims=True, dtype=np.float64)).astype(x.dtype, copy=False)

    def backward(g):
        inner = np.sum(g * y, axis=axis, keepdims=True, dtype=np.float64)
        _accumulate(x, (y * (g - inner)).astype(x.dtype, copy=False))

    return _result(y, (x,), backward)


def dropout(x, p: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), backward)


# -- shape manipulation ----------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape

    def backward(g):
        _accumulate(x, g.reshape(src))

    return _result(x.data.reshape(shape), (x,), backward)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(x, np.transpose(g, inverse))

    return _result(np.transpose(x.data, axes), (x,), backward)


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def take(x, key) -> Tensor:
    """Basic (non-fancy) indexing."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[key] = g
        _accumulate(x, full)

    return _result(x.data[key], (x,), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    _check(len(shapes) == 1, "stack", *[t.shape for t in tensors])

    def backward(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# -- reductions ------------------------------------------------------------

def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape).astype(x.dtype))

    return _result(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype), (x,), backward)


def mean_all(x) -> Tensor:
    return scale(sum_all(x), 1.0 / as_tensor(x).data.size)


def max_along(x, axis: int) -> Tensor:
    """Maximum along an axis; the gradient flows to the first maximizer."""
    x = as_tensor(x)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    y = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full)

    return _result(y, (x,), backward)


def attention_sum(weights, values) -> Tensor:
    """t[b] = sum_i weights[b, i] * values[b, i, :]."""
    weights, values = as_tensor(weights), as_tensor(values)
    _check(values.ndim == 3 and weights.shape == values.shape[:2], "attention_sum",
           weights.shape, values.shape)
    B, k = weights.shape
    pooled = matmul(reshape(weights, (B, 1, k)), values)
    return reshape(pooled, (B, values.shape[2]))


# -- normalization ---------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over axis 0 of a 2-D input.

    ``running_mean``/``running_var`` are numpy buffers updated in place in
    training mode (population variance).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check(x.ndim == 2 and gamma.shape == (x.shape[1],) and beta.shape == gamma.shape,
           "batch_norm", x.shape, gamma.shape)
    if training:
        mu = x.data.mean(axis=0, dtype=np.float64)
        var = x.data.var(axis=0, dtype=np.float64)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean.astype(np.float64), running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x.data - mu) * inv).astype(x.dtype, copy=False)
    y = xhat * gamma.data + beta.data
    n = x.shape[0]

    def backward(g):
        _accumulate(gamma, np.sum(g * xhat, axis=0, dtype=np.float64).astype(gamma.dtype))
        _accumulate(beta, g.sum(axis=0, dtype=np.float64).astype(beta.dtype))
        gx_hat = g * gamma.data
        if training:
            gx = (inv / n) * (n * gx_hat - gx_hat.sum(axis=0, dtype=np.float64)
                              - xhat * np.sum(gx_hat * xhat, axis=0, dtype=np.float64))
        else:
            gx = gx_hat * inv
        _accumulate(x, gx.astype(x.dtype, copy=False))

    return _result(y, (x, gamma, beta), backward)


# -- losses ----------------------------------------------------------------

P_CLIP = 1e-7


def bce_loss(p, y) -> float:
    """Binary cross-entropy of a probability against a 0/1 target."""
    p = float(np.clip(p, P_CLIP, 1 - P_CLIP))
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def bce_with_logits(logits, targets, weights=None) -> Tensor:
    """Weighted mean BCE of sigmoid(logits); d loss / d logit_i = w_i (p_i - y_i) / n."""
    z = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64).reshape(z.shape)
    p = _sigmoid(z.data.astype(np.float64))
    pc = np.clip(p, P_CLIP, 1 - P_CLIP)
    n = y.size
    loss = -np.sum(w * (y * np.log(pc) + (1 - y) * np.log(1 - pc))) / n

    def backward(g):
        _accumulate(z, (g * w * (p - y) / n).astype(z.dtype, copy=False))

    return _result(np.asarray(loss, dtype=np.float64), (z,), backward)
