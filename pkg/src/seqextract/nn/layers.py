"""Layers built from :mod:`seqextract.nn.tensor` primitives.

Each layer registers its parameters in a :class:`ParameterStore` under a
dotted prefix and keeps references to them; calling the layer builds graph
nodes. Weight matrices are stored (in, out).
"""

import numpy as np

from . import tensor as T


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Linear:
    def __init__(self, store, name, d_in, d_out, bias=True):
        self.weight = store.add(f"{name}.weight", glorot(store.init_rng, d_in, d_out))
        self.bias = store.add(f"{name}.bias", np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class Embedding:
    def __init__(self, store, name, num, dim, scale=None):
        scale = scale if scale is not None else 1.0 / np.sqrt(dim)
        self.weight = store.add(f"{name}.weight", store.init_rng.uniform(-scale, scale, size=(num, dim)))

    def __call__(self, idx):
        return T.embedding(self.weight, idx)


class LayerNorm:
    def __init__(self, store, name, dim, eps=1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim))
        self.beta = store.add(f"{name}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward:
    """Position-wise two-layer MLP with dropout after each projection."""

    def __init__(self, store, name, d, d_hidden, act="relu", dropout=0.0):
        self.fc1 = Linear(store, f"{name}.fc1", d, d_hidden)
        self.fc2 = Linear(store, f"{name}.fc2", d_hidden, d)
        self.act = T.gelu if act == "gelu" else T.relu
        self.p = dropout
        self.store = store

    def __call__(self, x):
        s = self.store
        h = T.dropout(self.act(self.fc1(x)), self.p, s.rng, s.training)
        return T.dropout(self.fc2(h), self.p, s.rng, s.training)


class GRUCell:
    """Single GRU step (reset gate applied to the projected hidden state).

    r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
    z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
    n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h
    Gate blocks are packed in the order (r, z, n).
    """

    def __init__(self, store, name, d_in, d_h):
        self.d_h = d_h
        w_ih = np.concatenate([glorot(store.init_rng, d_in, d_h) for _ in range(3)], axis=1)
        w_hh = np.concatenate([glorot(store.init_rng, d_h, d_h) for _ in range(3)], axis=1)
        self.w_ih = store.add(f"{name}.w_ih", w_ih)
        self.w_hh = store.add(f"{name}.w_hh", w_hh)
        self.b_ih = store.add(f"{name}.b_ih", np.zeros(3 * d_h))
        self.b_hh = store.add(f"{name}.b_hh", np.zeros(3 * d_h))

    def input_proj(self, x):
        # precompute for a whole sequence at once
        return T.linear(x, self.w_ih, self.b_ih)

    def step(self, xp, h):
        """``xp`` is the projected input (``input_proj``) for this step."""
        d = self.d_h
        hp = T.linear(h, self.w_hh, self.b_hh)
        r = T.sigmoid(xp[..., :d] + hp[..., :d])
        z = T.sigmoid(xp[..., d:2 * d] + hp[..., d:2 * d])
        n = T.tanh(xp[..., 2 * d:] + r * hp[..., 2 * d:])
        return (1.0 - z) * n + z * h

    def __call__(self, x, h):
        return self.step(self.input_proj(x), h)


class MultiHeadAttention:
    """Scaled dot-product attention with ``heads`` heads.

    ``mask`` is boolean, broadcastable to (B, heads, Lq, Lk), True where a
    query may attend to a key.
    """

    def __init__(self, store, name, d, heads, dropout=0.0):
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.d, self.h, self.dh = d, heads, d // heads
        self.q = Linear(store, f"{name}.q", d, d)
        self.k = Linear(store, f"{name}.k", d, d)
        self.v = Linear(store, f"{name}.v", d, d)
        self.o = Linear(store, f"{name}.o", d, d)
        self.p = dropout
        self.store = store
        self.last_weights = None

    def _split(self, x):
        B, L, _ = x.shape
        return T.transpose(x.reshape(B, L, self.h, self.dh), (0, 2, 1, 3))

    def __call__(self, xq, xkv=None, mask=None):
        xkv = xq if xkv is None else xkv
        B, Lq, _ = xq.shape
        q = self._split(self.q(xq))
        k = self._split(self.k(xkv))
        v = self._split(self.v(xkv))
        scores = T.matmul(q, T.swap_last(k)) * (1.0 / np.sqrt(self.dh))
        w = T.softmax(scores, axis=-1, mask=mask)
        self.last_weights = w.data
        s = self.store
        w = T.dropout(w, self.p, s.rng, s.training)
        out = T.matmul(w, v)
        out = T.transpose(out, (0, 2, 1, 3)).reshape(B, Lq, self.d)
        return self.o(out)


def causal_mask(L):
    return np.tril(np.ones((L, L), dtype=bool))
