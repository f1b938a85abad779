"""Named parameter container with train/eval mode and seeded randomness."""

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Ordered collection of trainable tensors.

    Two independent random streams are derived from ``seed``: ``init_rng`` for
    parameter initialization and ``rng`` for dropout/masking, so adding a layer
    does not shift the dropout stream of an existing one.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        init_ss, run_ss = np.random.SeedSequence(self.seed).spawn(2)
        self.init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(run_ss)
        self.params = {}
        self.training = True

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(value, dtype=np.float32), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def num_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def train(self, mode=True):
        self.training = bool(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        """Gradient per parameter; untouched parameters report zeros."""
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params.items()}

    def state_dict(self):
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in self.params.items():
            v = np.asarray(state[n])
            if v.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {n}: {v.shape} vs {p.data.shape}")
            p.data = v.astype(p.data.dtype, copy=True)

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def reseed(self, seed):
        """Reset the dropout/masking stream (initial values are untouched)."""
        _, run_ss = np.random.SeedSequence(int(seed)).spawn(2)
        self.rng = np.random.default_rng(run_ss)
