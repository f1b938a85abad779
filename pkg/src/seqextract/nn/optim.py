"""Adam with bias correction."""

import numpy as np


class Adam:
    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in store}
        self.v = {n: np.zeros_like(p.data) for n, p in store}

    def step(self):
        """Apply one update from the gradients in the store, then clear them.

        Parameters without a gradient are updated as if their gradient were
        zero (their moments still decay).
        """
        if all(p.grad is None for _, p in self.store):
            raise RuntimeError("adam step without any gradients")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n, p in self.store:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[n]
            v = self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)
            p.grad = None

    def state_dict(self):
        return {"t": self.t, "m": {n: a.copy() for n, a in self.m.items()}, "v": {n: a.copy() for n, a in self.v.items()}}
