"""Black-box facade over a victim recommender.

Only ordered item-id lists ever leave this module. Queries are metered on
named ledgers (``attack`` and ``supervision``) with two charging modes:

* ``per-sequence``: :meth:`Oracle.open_sequence` charges one unit to the attack
  ledger and every attack query made under the returned token is free;
* ``per-call``: every attack query that misses the cache costs one unit.

Supervision queries are always charged per call. Cache hits are free in both
modes.
"""

import hashlib
import itertools
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels

LEDGERS = ("attack", "supervision")
MODES = ("per-sequence", "per-call")


class BudgetExhausted(RuntimeError):
    def __init__(self, ledger, limit, used, progress=None):
        self.ledger, self.limit, self.used, self.progress = ledger, limit, used, progress
        extra = f" after {progress} queries" if progress is not None else ""
        super().__init__(f"{ledger} budget exhausted: used {used} of {limit}{extra}")


class EmptyPrefix(ValueError):
    pass


class InvalidToken(RuntimeError):
    pass


def prefix_hash(prefix):
    arr = np.asarray(prefix, dtype="<i8")
    return hashlib.sha1(arr.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class TopKList:
    items: tuple
    prefix_hash: str = ""

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __contains__(self, item):
        return item in self.items


class QueryBudget:
    """Thread-safe counters; ``None`` limits are unlimited."""

    def __init__(self, limit, supervision_limit=None, mode="per-sequence"):
        if mode not in MODES:
            raise ValueError(f"charging mode must be one of {MODES}")
        self.mode = mode
        self.limits = {"attack": limit, "supervision": supervision_limit}
        self.used = {"attack": 0, "supervision": 0}
        self._lock = threading.Lock()

    def charge(self, ledger, units=1):
        if ledger not in LEDGERS:
            raise ValueError(f"unknown ledger {ledger!r}")
        with self._lock:
            limit = self.limits[ledger]
            if limit is not None and self.used[ledger] + units > limit:
                raise BudgetExhausted(ledger, limit, self.used[ledger])
            self.used[ledger] += units

    def remaining(self, ledger="attack"):
        limit = self.limits[ledger]
        return None if limit is None else limit - self.used[ledger]

    def snapshot(self):
        with self._lock:
            return {"mode": self.mode, "limits": dict(self.limits), "used": dict(self.used)}


class Oracle:
    """Top-k query interface over a frozen model."""

    def __init__(self, model, budget=None, cache=True, exclude_seen=False):
        self._model = model
        self.budget = budget or QueryBudget(None, None, "per-call")
        self.n_items = model.n
        self.exclude_seen = exclude_seen
        self._cache = {} if cache else None
        self._tokens = set()
        self._counter = itertools.count(1)
        self._lock = threading.Lock()
        self._model_lock = threading.Lock()
        self.cache_hits = 0
        self.model_calls = 0

    # -- sequences ------------------------------------------------------------
    def open_sequence(self):
        if self.budget.mode != "per-sequence":
            raise InvalidToken("open_sequence needs per-sequence charging")
        self.budget.charge("attack")
        with self._lock:
            token = f"seq-{next(self._counter):08d}"
            self._tokens.add(token)
        return token

    def close_sequence(self, token):
        with self._lock:
            if token not in self._tokens:
                raise InvalidToken(f"unknown or closed token {token!r}")
            self._tokens.discard(token)

    def open_many(self, count):
        """Open ``count`` sequences or none (all-or-nothing budget check)."""
        if self.budget.mode != "per-sequence":
            raise InvalidToken("open_many needs per-sequence charging")
        self.budget.charge("attack", count)
        with self._lock:
            tokens = [f"seq-{next(self._counter):08d}" for _ in range(count)]
            self._tokens.update(tokens)
        return tokens

    # -- queries ----------------------------------------------------------------
    def query_topk(self, prefix, k, ledger="attack", token=None):
        return self.query_topk_many([prefix], k, ledger, token)[0]

    def query_topk_many(self, prefixes, k, ledger="attack", token=None, tokens=None):
        """Answer several prefixes; charges are applied in order.

        On exhaustion the answers already paid for are cached, then
        :class:`BudgetExhausted` is raised with ``progress`` = number answered.
        """
        if k < 1 or k > self.n_items:
            raise ValueError(f"k must be in [1, {self.n_items}]")
        keys = []
        for p in prefixes:
            p = np.asarray(p, dtype=np.int64).reshape(-1)
            if p.size == 0:
                raise EmptyPrefix("empty prefix")
            keys.append((p.tobytes(), k))
        results = [None] * len(keys)
        todo = []
        pending = set()
        err = None
        for i, key in enumerate(keys):
            if self._cache is not None and key in self._cache:
                results[i] = self._cache[key]
                self.cache_hits += 1
                continue
            if self._cache is not None and key in pending:
                todo.append(i)
                self.cache_hits += 1
                continue
            try:
                self._authorize(ledger, token if tokens is None else tokens[i])
            except BudgetExhausted as e:
                err = BudgetExhausted(e.ledger, e.limit, e.used, progress=i)
                break
            todo.append(i)
            pending.add(key)
        if todo:
            # dedupe within the call so repeated prefixes score once
            uniq = {}
            for i in todo:
                uniq.setdefault(keys[i], i)
            idx = list(uniq.values())
            with self._model_lock:
                scores = self._model.score_prefixes([prefixes[i] for i in idx])
                self.model_calls += 1
            if self.exclude_seen:
                for r, i in enumerate(idx):
                    scores[r, np.asarray(prefixes[i], dtype=np.int64)] = -np.inf
            top = kernels.topk_rows(scores, k)
            answers = {}
            for r, i in enumerate(idx):
                answers[keys[i]] = TopKList(tuple(int(x) for x in top[r]), prefix_hash(prefixes[i]))
            for i in todo:
                results[i] = answers[keys[i]]
            if self._cache is not None:
                self._cache.update(answers)
        if err is not None:
            raise err
        return results

    def _authorize(self, ledger, token):
        if ledger == "attack" and self.budget.mode == "per-sequence":
            if token is None:
                raise InvalidToken("attack queries in per-sequence mode need an open sequence token")
            with self._lock:
                if token not in self._tokens:
                    raise InvalidToken(f"unknown or closed token {token!r}")
            return
        self.budget.charge(ledger)
