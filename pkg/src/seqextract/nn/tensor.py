"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when any input requires a
gradient, records the closure that pushes its output gradient back to its
parents. :meth:`Tensor.backward` walks the recorded graph in reverse
topological order. Only the operations the recommender models need are
provided; fused kernels (softmax, layer norm, cross-entropy) keep the graphs
short.
"""

import contextlib

import numpy as np

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float32


class NaNError(FloatingPointError):
    """Raised when an operation produces a non-finite value."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def default_dtype(dtype):
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to our reflected ops

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="", name=None):
        if not isinstance(data, np.ndarray) or data.dtype.kind != "f":
            data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    # -- basics -----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def zero_grad(self):
        self.grad = None

    # -- graph traversal --------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar loss")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into .grad
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operator sugar -----------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op):
    if data.dtype.kind == "f" and np.isnan(data).any():
        raise NaNError(f"NaN produced by {op}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def check_finite(t, op):
    if not np.all(np.isfinite(t.data)):
        raise NaNError(f"non-finite value produced by {op}")
    return t


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(g, sb) if rb else None),
        "add",
    )


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(-g, sb) if rb else None),
        "sub",
    )


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad
    return _make(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if ra else None,
            _unbroadcast(g * ad, bd.shape) if rb else None,
        ),
        "mul",
    )


def div(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data
    out = ad / bd
    ra, rb = a.requires_grad, b.requires_grad
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / bd, ad.shape) if ra else None,
            _unbroadcast(-g * out / bd, bd.shape) if rb else None,
        ),
        "div",
    )


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    out = _sigmoid_np(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def hinge(x):
    """max(0, x)."""
    return relu(x)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    xd = x.data
    c = xd.dtype.type(_GELU_C)
    inner = c * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), backward, "gelu")


def clip(x, lo, hi):
    xd = x.data
    mask = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * mask,), "clip")


def power(x, p):
    xd = x.data
    return _make(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1),), "pow")


def where(cond, a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return _make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0), sa), _unbroadcast(np.where(cond, 0, g), sb)),
        "where",
    )


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x, idx):
    shape = x.shape
    dtype = x.dtype

    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward, "getitem")


def take_along(x, idx, axis=-1):
    """Gather along ``axis`` (``np.take_along_axis`` semantics)."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape
    dtype = x.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        # put_along_axis overwrites, so accumulate through add.at on flat index
        ax = axis % len(shape)
        grids = list(np.indices(idx.shape, sparse=True))
        grids[ax] = idx
        np.add.at(out, tuple(grids), g)
        return (out,)

    return _make(np.take_along_axis(x.data, idx, axis=axis), (x,), backward, "take_along")


def embedding(weight, idx):
    """Row lookup ``weight[idx]`` for an integer array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise IndexError(f"embedding id out of range [0, {weight.shape[0]})")
    wshape = weight.shape
    dtype = weight.dtype

    def backward(g):
        out = np.zeros(wshape, dtype=dtype)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, wshape[1]))
        return (out,)

    return _make(weight.data[idx], (weight,), backward, "embedding")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if ra else None
        if not rb:
            gb = None
        elif ad.ndim >= 2 and bd.ndim == 2:
            # fold batch dims into rows: one gemm, no broadcast sum
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def linear(x, w, b=None):
    """``x @ w + b`` with ``w`` shaped (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# fused numerics
# ---------------------------------------------------------------------------


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; ``mask`` (bool, True = keep) removes entries.

    Rows with nothing kept produce zeros instead of NaN.
    """
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, xd.shape)
        xd = np.where(mask, xd, -np.inf)
    m = np.max(xd, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(xd - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    z = xd - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def cross_entropy(logits, targets, weights=None):
    """Mean full-softmax cross-entropy over rows of a 2-D ``logits``.

    ``weights`` (0/1 per row) drops padded rows from the mean.
    """
    targets = np.asarray(targets, dtype=np.int64)
    xd = logits.data
    m = xd.max(axis=1, keepdims=True)
    z = xd - m
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    rows = np.arange(xd.shape[0])
    nll = np.log(s[:, 0]) - z[rows, targets]
    if weights is None:
        w = np.ones(xd.shape[0], dtype=xd.dtype)
    else:
        w = np.asarray(weights, dtype=xd.dtype)
    denom = max(float(w.sum()), 1.0)
    loss = np.asarray((nll * w).sum() / denom, dtype=xd.dtype)

    def backward(g):
        p = ez / s
        p[rows, targets] -= 1.0
        return ((g * w / denom)[:, None] * p,)

    return _make(loss, (logits,), backward, "cross_entropy")


def layer_norm(x, gamma, beta, eps=1e-5):
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    D = xd.shape[-1]

    def backward(g):
        gg = g * gamma.data
        gx = inv / D * (D * gg - gg.sum(-1, keepdims=True) - xhat * (gg * xhat).sum(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def dropout(x, p, rng, training):
    """Inverted dropout; identity when ``training`` is false or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def binary_cross_entropy(p, y, eps=1e-7, reduction="sum"):
    """-[y log p + (1-y) log(1-p)] with ``p`` clamped to [eps, 1-eps]."""
    y = np.asarray(y, dtype=p.dtype)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    pc = clip(p, eps, 1.0 - eps)
    terms = y * log(pc) + (1.0 - y) * log(1.0 - pc)
    total = -tsum(terms)
    if reduction == "mean":
        return total * (1.0 / max(y.size, 1))
    return total
