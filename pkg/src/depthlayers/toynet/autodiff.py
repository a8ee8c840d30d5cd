"""Minimal reverse-mode differentiation over dense float64 arrays.

Every op records its parents and a closure that maps the output gradient to
parent gradients. ``backward`` walks the graph in reverse topological order.
Image tensors are laid out ``(N, C, H, W)``; conv kernels ``(O, I, kh, kw)``.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_RECORDING = [True]
_KINKS: list = []


@contextlib.contextmanager
def trace_kinks():
    """Collect the sign pattern at every non-smooth op (for gradient checks)."""
    trace: list = []
    _KINKS.append(trace)
    try:
        yield trace
    finally:
        _KINKS.remove(trace)


def _record_kink(x):
    if _KINKS:
        _KINKS[-1].append(x > 0)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph."""
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _op(value, parents, backward_fn):
    parents = tuple(parents)
    if not _RECORDING[-1] or not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents=parents, backward_fn=backward_fn)


def backward(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that
    requires gradients."""
    if root.backward_fn is None and not root.parents:
        if not root.requires_grad:
            raise RuntimeError("backward called on a tensor with no recorded graph")
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _op(a.value * c, (a,), lambda g: (g * c,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    _record_kink(a.value)
    return _op(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _op(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    _record_kink(a.value)
    factor = np.where(a.value > 0, 1.0, slope)
    return _op(a.value * factor, (a,), lambda g: (g * factor,))


# -- reductions ---------------------------------------------------------------

def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    return _op(np.asarray(a.value.mean()), (a,), lambda g: (np.full(a.shape, g / n),))


def total(*terms) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


# -- shape ops ----------------------------------------------------------------

def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _op(np.concatenate([t.value for t in tensors], axis=axis), tensors, grad_fn)


def diff_x(a) -> Tensor:
    """Forward difference along the last axis."""
    a = as_tensor(a)

    def grad_fn(g):
        out = np.zeros(a.shape)
        out[..., 1:] += g
        out[..., :-1] -= g
        return (out,)

    return _op(a.value[..., 1:] - a.value[..., :-1], (a,), grad_fn)


def diff_y(a) -> Tensor:
    """Forward difference along the second-to-last axis."""
    a = as_tensor(a)

    def grad_fn(g):
        out = np.zeros(a.shape)
        out[..., 1:, :] += g
        out[..., :-1, :] -= g
        return (out,)

    return _op(a.value[..., 1:, :] - a.value[..., :-1, :], (a,), grad_fn)


def avg_pool2(a) -> Tensor:
    """2x2 average pooling; odd trailing rows/columns are dropped."""
    a = as_tensor(a)
    h, w = a.shape[-2] // 2, a.shape[-1] // 2
    if h == 0 or w == 0:
        raise ValueError(f"cannot pool spatial size {a.shape[-2:]}")
    crop = a.value[..., :2 * h, :2 * w]
    val = crop.reshape(*crop.shape[:-2], h, 2, w, 2).mean(axis=(-3, -1))

    def grad_fn(g):
        out = np.zeros(a.shape)
        up = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        out[..., :2 * h, :2 * w] = up
        return (out,)

    return _op(val, (a,), grad_fn)


def crop2d(a, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` window of the last two axes."""
    a = as_tensor(a)
    full = a.shape

    def grad_fn(g):
        out = np.zeros(full)
        out[..., :h, :w] = g
        return (out,)

    return _op(a.value[..., :h, :w], (a,), grad_fn)


def upsample2(a) -> Tensor:
    """Nearest-neighbour x2 upsampling."""
    a = as_tensor(a)
    val = np.repeat(np.repeat(a.value, 2, axis=-2), 2, axis=-1)

    def grad_fn(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return _op(val, (a,), grad_fn)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Zero-padded 'same' convolution (cross-correlation), square odd kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv expects {ci} input channels, got {c}")
    p = kh // 2
    xp = np.pad(x.value, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # cols: (c*kh*kw, n*ho*wo)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.value.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.value[:, None]
    val = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def grad_fn(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gw = (gmat @ cols.T).reshape(weight.shape)
        gcols = (wmat.T @ gmat).reshape(c, kh, kw, n, ho, wo)
        gxp = np.zeros((c, n) + xp.shape[2:])
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
        gx = gxp[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gmat.sum(axis=1))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _op(val, parents, grad_fn)
