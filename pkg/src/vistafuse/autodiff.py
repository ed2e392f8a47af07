"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records every differentiable operation executed inside its
``with`` block, in execution (hence topological) order.  ``backward`` walks
the record once in reverse and accumulates gradients into every
``requires_grad`` leaf.  Tensors are plain numpy arrays underneath; all
operations run in float64.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

_active_tape = None


class Tape:
    """Ordered record of executed operations, consumed by one backward pass."""

    def __init__(self):
        self._ops = []  # (output, inputs, backward_fn)
        self.consumed = False

    def __enter__(self):
        global _active_tape
        self._previous = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._previous
        return False

    def record(self, output, inputs, backward_fn):
        self._ops.append((output, inputs, backward_fn))

    def __len__(self):
        return len(self._ops)


class Tensor:
    """n-dimensional float64 array, optionally carrying a gradient buffer."""

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._in_graph = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are wrapped into constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, inputs, backward_fn):
    """Attach ``out`` to the active tape if any input participates in the graph."""
    if _active_tape is not None and any(t._in_graph for t in inputs):
        out._in_graph = True
        _active_tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise operations


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def scale(a, factor):
    """Multiply by a python scalar."""
    return mul(a, _as_tensor(float(factor)))


def maximum(a, b):
    """Elementwise max; gradient ties are routed to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def bwd(g):
        return (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        )

    return _record(out, (a, b), bwd)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(a.data * mask)

    def bwd(g):
        return (g * mask,)

    return _record(out, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    root = np.sqrt(a.data)
    out = Tensor(root)

    def bwd(g):
        return (g / (2.0 * root),)

    return _record(out, (a,), bwd)


def elementwise(op, a, b=None):
    """String-dispatched elementwise op: add|sub|mul|max|relu|scale."""
    table = {"add": add, "sub": sub, "mul": mul, "max": maximum, "scale": scale}
    if op == "relu":
        return relu(a)
    if op not in table:
        raise ParameterError(f"unknown elementwise op {op!r}")
    return table[op](a, b)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(old),)

    return _record(out, (a,), bwd)


def transpose_last(a):
    """Swap the last two axes (matrix transpose for stacked matrices)."""
    a = _as_tensor(a)
    out = Tensor(np.swapaxes(a.data, -1, -2))

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return _record(out, (a,), bwd)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _record(out, tuple(tensors), bwd)


def getitem(a, key):
    a = _as_tensor(a)
    out = Tensor(a.data[key])
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        full[key] += g
        return (full,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# nonlinear blocks


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (a,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    xhat = div(centered, sqrt(add(var, _as_tensor(eps))))
    return add(mul(xhat, gain), bias)


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep)

    def bwd(g):
        return (g * keep,)

    return _record(out, (x,), bwd)


def conv2d(x, kernels, bias, stride=1):
    """Valid cross-correlation over NHWC input with k×k×c_in×c_out kernels."""
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    b, h, w, cin = x.shape
    kh, kw, kcin, cout = kernels.shape
    if h < kh or w < kw:
        raise ShapeError(f"image {h}x{w} smaller than kernel {kh}x{kw}")
    if cin != kcin:
        raise ShapeError(f"channel mismatch: input {cin}, kernel {kcin}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # b, oh, ow, cin, kh, kw
    out_data = np.einsum("bijckl,klcd->bijd", windows, kernels.data) + bias.data
    out = Tensor(out_data)
    oh, ow = out_data.shape[1:3]

    def bwd(g):
        gk = np.einsum("bijckl,bijd->klcd", windows, g)
        gb = g.sum(axis=(0, 1, 2))
        gx = np.zeros_like(x.data)
        for p in range(kh):
            for q in range(kw):
                gx[:, p : p + oh * stride : stride, q : q + ow * stride : stride, :] += np.einsum(
                    "bijd,cd->bijc", g, kernels.data[p, q]
                )
        return gx, gk, gb

    return _record(out, (x, kernels, bias), bwd)


def maxpool2x2(x):
    """2×2 max-pool with stride 2; odd trailing rows/columns are dropped."""
    x = _as_tensor(x)
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    cropped = x.data[:, : h2 * 2, : w2 * 2, :]
    tiles = cropped.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        b, h2, w2, c, 4
    )
    idx = tiles.argmax(axis=-1)
    out = Tensor(np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0])

    def bwd(g):
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, : h2 * 2, : w2 * 2, :] = (
            gt.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(
                b, h2 * 2, w2 * 2, c
            )
        )
        return (gx,)

    return _record(out, (x,), bwd)


def cross_entropy(logits, labels, n_classes=None):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if n_classes is None:
        n_classes = k
    from .errors import DataError

    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise DataError(f"labels must lie in [0, {n_classes}), got {labels.min()}..{labels.max()}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    picked = logits.data[np.arange(b), labels]
    out = Tensor(np.mean(lse - picked))

    def bwd(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# backward


def backward(loss, tape):
    """Populate gradients of all requires_grad leaves reached from ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("backward already ran on this tape; record a new forward pass")
    tape.consumed = True
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape._ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not t._in_graph:
                continue
            gi = np.asarray(gi, dtype=np.float64).reshape(t.shape)
            if t.requires_grad:
                t.grad += gi
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
