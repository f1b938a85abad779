"""Small deterministic stand-ins for trained recommenders."""

import numpy as np


class TableModel:
    """Scores come from ``fn(prefix) -> score vector``."""

    def __init__(self, n, fn):
        self.n = n
        self.fn = fn

    def score_prefixes(self, prefixes):
        return np.stack([np.asarray(self.fn(np.asarray(p)), dtype=np.float32) for p in prefixes])


class FixedModel(TableModel):
    def __init__(self, scores):
        scores = np.asarray(scores, dtype=np.float32)
        super().__init__(len(scores), lambda p: scores)


def transition_model(n, seed=0):
    """Scores depend on the last item only (a random transition table)."""
    table = np.random.default_rng(seed).normal(size=(n, n)).astype(np.float32)
    return TableModel(n, lambda p: table[p[-1]])
