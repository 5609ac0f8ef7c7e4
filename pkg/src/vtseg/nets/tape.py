"""Minimal reverse-mode differentiation over numpy arrays.

Every primitive returns a :class:`Tensor` holding its value and a closure
that maps the output gradient to parent gradients. Spatial tensors are
laid out ``(batch, channel, *spatial)`` with 2 or 3 spatial axes.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

# When a list, piecewise-linear primitives append their branch selection
# (ReLU masks, pooling argmax) so callers can tell whether two forward
# passes took the same linear piece.
_pattern_log: list | None = None


class record_pattern:
    """Context manager collecting the branch pattern of forward passes."""

    def __enter__(self):
        global _pattern_log
        self._prev, _pattern_log = _pattern_log, []
        return _pattern_log

    def __exit__(self, *exc):
        global _pattern_log
        _pattern_log = self._prev


def _log(a):
    if _pattern_log is not None:
        _pattern_log.append(a)


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, seed=None):
        """Propagate ``seed`` (default ones) to every tensor that requires grad."""
        order, seen = [], set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, self.value.dtype)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def const(value) -> Tensor:
    return Tensor(np.asarray(value))


def param(value) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=True)


def _node(value, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, tuple(parents), backward_fn, True)
    return Tensor(value)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))
    return _node(a.value + b.value, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.value * c, (a,), lambda g: a.accumulate(g * c))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    _log(mask)
    return _node(x.value * mask, (x,), lambda g: x.accumulate(g * mask))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.value)
    return _node(y, (x,), lambda g: x.accumulate(g * y * (1 - y)))


_GELU_C = float(np.sqrt(2.0 / np.pi))  # plain float keeps float32 inputs float32


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    v = x.value
    u = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(u)
    y = 0.5 * v * (1 + t)

    def back(g):
        du = _GELU_C * (1 + 3 * 0.044715 * v * v)
        x.accumulate(g * (0.5 * (1 + t) + 0.5 * v * (1 - t * t) * du))
    return _node(y, (x,), back)


def dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.value.dtype) / (1.0 - rate)
    return _node(x.value * keep, (x,), lambda g: x.accumulate(g * keep))


# -- shape ----------------------------------------------------------------

def concat(xs, axis: int = 1) -> Tensor:
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            x.accumulate(g[tuple(idx)])
    return _node(np.concatenate([x.value for x in xs], axis=axis), tuple(xs), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: x.accumulate(g.reshape(old)))


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _node(np.transpose(x.value, axes), (x,),
                 lambda g: x.accumulate(np.transpose(g, inverse)))


# -- dense ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b`` over matching leading axes."""
    def back(g):
        a.accumulate(g @ np.swapaxes(b.value, -1, -2))
        b.accumulate(np.swapaxes(a.value, -1, -2) @ g)
    return _node(a.value @ b.value, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is ``(in, out)``."""
    xv = x.value

    def back(g):
        x.accumulate(g @ w.value.T)
        flat_x = xv.reshape(-1, xv.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        w.accumulate(flat_x.T @ flat_g)
        b.accumulate(flat_g.sum(axis=0))
    return _node(xv @ w.value + b.value, (x, w, b), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _node(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        n = v.shape[-1]
        gx = g * gamma.value
        x.accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n))
        gamma.accumulate((g * xhat).reshape(-1, n).sum(axis=0))
        beta.accumulate(g.reshape(-1, n).sum(axis=0))
    return _node(xhat * gamma.value + beta.value, (x, gamma, beta), back)


# -- spatial --------------------------------------------------------------

def _im2col(xp, k, stride, out_shape):
    nd = len(k)
    axes = tuple(range(2, 2 + nd))
    win = sliding_window_view(xp, k, axis=axes)
    win = win[(slice(None), slice(None)) + tuple(slice(None, o * stride, stride) for o in out_shape)]
    n, c = xp.shape[:2]
    order = (0, 1) + tuple(range(2 + nd, 2 + 2 * nd)) + axes
    col = np.ascontiguousarray(win.transpose(order))
    return col.reshape(n, c * int(np.prod(k)), int(np.prod(out_shape)))


def conv(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding=None) -> Tensor:
    """N-d cross-correlation. ``w`` is ``(out, in, *kernel)``.

    ``padding=None`` means "same" padding ``k // 2`` with zero fill.
    """
    xv, wv = x.value, w.value
    nd = xv.ndim - 2
    k = wv.shape[2:]
    if wv.shape[1] != xv.shape[1]:
        raise ValueError(f"conv expects {wv.shape[1]} input channels, got {xv.shape[1]}")
    pad = tuple(kk // 2 for kk in k) if padding is None else (
        (padding,) * nd if np.isscalar(padding) else tuple(padding))
    xp = np.pad(xv, ((0, 0), (0, 0)) + tuple((p, p) for p in pad))
    out_shape = tuple((xp.shape[2 + i] - k[i]) // stride + 1 for i in range(nd))
    col = _im2col(xp, k, stride, out_shape)
    n, o = xv.shape[0], wv.shape[0]
    w2 = wv.reshape(o, -1)
    y = (w2 @ col).reshape((n, o) + out_shape) + b.value.reshape((1, o) + (1,) * nd)

    def back(g):
        g2 = g.reshape(n, o, -1)
        if w.requires_grad:
            w.accumulate(np.tensordot(g2, col, axes=([0, 2], [0, 2])).reshape(wv.shape))
        if b.requires_grad:
            b.accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            gcol = (w2.T @ g2).reshape((n, xv.shape[1]) + k + out_shape)
            gxp = np.zeros_like(xp)
            for offs in itertools.product(*(range(kk) for kk in k)):
                dst = (slice(None), slice(None)) + tuple(
                    slice(a, a + stride * (m - 1) + 1, stride) for a, m in zip(offs, out_shape))
                gxp[dst] += gcol[(slice(None), slice(None)) + offs]
            crop = (slice(None), slice(None)) + tuple(
                slice(p, p + s) for p, s in zip(pad, xv.shape[2:]))
            x.accumulate(gxp[crop])
    return _node(y, (x, w, b), back)


def conv_transpose(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Transposed convolution with kernel size equal to stride (non-overlapping).

    ``w`` is ``(in, out, *kernel)``; each spatial size is multiplied by the
    kernel size.
    """
    xv, wv = x.value, w.value
    nd = xv.ndim - 2
    n, ci = xv.shape[:2]
    s = xv.shape[2:]
    co, k = wv.shape[1], wv.shape[2:]
    # y[n, o, i*k + a] = sum_c x[n, c, i] w[c, o, a]
    t = np.tensordot(xv, wv, axes=([1], [0]))  # (n, *s, co, *k)
    order = [0, 1 + nd]
    for i in range(nd):
        order += [1 + i, 2 + nd + i]
    y = t.transpose(order).reshape((n, co) + tuple(a * b_ for a, b_ in zip(s, k)))
    y = y + b.value.reshape((1, co) + (1,) * nd)

    def back(g):
        gs = g.reshape((n, co) + tuple(itertools.chain.from_iterable(zip(s, k))))
        inv = [0] + [2 + 2 * i for i in range(nd)] + [1] + [3 + 2 * i for i in range(nd)]
        gt = gs.transpose(inv)  # (n, *s, co, *k)
        tail = list(range(1 + nd, 2 + 2 * nd))
        if x.requires_grad:
            gx = np.tensordot(gt, wv, axes=(tail, [1] + list(range(2, 2 + nd))))
            x.accumulate(np.moveaxis(gx, -1, 1))
        if w.requires_grad:
            lead = [0] + list(range(2, 2 + nd))
            w.accumulate(np.tensordot(xv, gt, axes=(lead, list(range(0, 1 + nd)))))
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0,) + tuple(range(2, 2 + nd))))
    return _node(y, (x, w, b), back)


def max_pool(x: Tensor, f: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the first maximum."""
    xv = x.value
    nd = xv.ndim - 2
    n, c = xv.shape[:2]
    s = xv.shape[2:]
    if any(d % f for d in s):
        raise ValueError(f"spatial dims {s} not divisible by pool factor {f}")
    o = tuple(d // f for d in s)
    split = xv.reshape((n, c) + tuple(itertools.chain.from_iterable((d, f) for d in o)))
    order = [0, 1] + [2 + 2 * i for i in range(nd)] + [3 + 2 * i for i in range(nd)]
    win = split.transpose(order).reshape((n, c) + o + (f ** nd,))
    idx = win.argmax(axis=-1)
    _log(idx)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape((n, c) + o + (f,) * nd).transpose(np.argsort(order))
        x.accumulate(gw.reshape(xv.shape))
    return _node(y, (x,), back)


# -- loss -----------------------------------------------------------------

def soft_dice(pred: np.ndarray, target: np.ndarray, eps: float = 1.0):
    """Soft Dice loss ``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`` and its gradient."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    inter = float(np.sum(pred * target, dtype=np.float64))
    denom = float(np.sum(pred, dtype=np.float64)) + float(np.sum(target, dtype=np.float64)) + eps
    num = 2.0 * inter + eps
    loss = 1.0 - num / denom
    grad = -(2.0 * target * denom - num) / (denom * denom)
    return loss, grad.astype(pred.dtype)
