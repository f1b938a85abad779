"""Interaction logs: loading, leave-last-two splits, few-shot subsets and the
exploit/explore partition of the adversary's raw data."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MIN_SEQ_LEN = 3


class DatasetError(ValueError):
    pass


@dataclass
class InteractionDataset:
    users: list
    items: list
    sequences: list
    source: str = ""

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_items(self):
        return len(self.items)

    def stats(self):
        m, n = self.n_users, self.n_items
        total = int(sum(len(s) for s in self.sequences))
        return {
            "source": self.source,
            "users": m,
            "items": n,
            "interactions": total,
            "avg_len": total / m if m else 0.0,
            "sparsity": 1.0 - total / (m * n) if m and n else 1.0,
        }


@dataclass
class SplitDataset:
    train: list
    val: np.ndarray
    test: np.ndarray
    n_items: int
    users: list = field(default_factory=list)

    @property
    def n_users(self):
        return len(self.train)

    def history(self, u):
        """Full sequence of user ``u`` (train + val + test)."""
        return np.concatenate([self.train[u], [self.val[u], self.test[u]]])


@dataclass
class FewShotSubset:
    ratio: float
    users: np.ndarray
    sequences: list
    n_items: int

    @property
    def size(self):
        """|R|: interactions available to the adversary."""
        return int(sum(len(s) for s in self.sequences))


@dataclass
class PartitionedRaw:
    """Every (prefix, next item) pair of the few-shot data with its oracle list.

    ``labels[i] == 1`` marks the exploitation set (next item inside the list),
    0 the exploration set.
    """

    prefixes: list
    next_items: np.ndarray
    lists: np.ndarray
    labels: np.ndarray
    owners: np.ndarray
    k: int
    n_items: int

    def __len__(self):
        return len(self.prefixes)

    @property
    def exploit(self):
        return np.nonzero(self.labels == 1)[0]

    @property
    def explore(self):
        return np.nonzero(self.labels == 0)[0]


def _key(tok):
    return (0, int(tok), "") if tok.lstrip("-").isdigit() else (1, 0, tok)


def load_dataset(path, format="ml-ratings", min_seq_len=MIN_SEQ_LEN, min_item_count=1):
    """Read an interaction log into dense, chronologically ordered sequences.

    ``ml-ratings``: ``user::item::rating::timestamp``; ``tsv``:
    ``user<TAB>item<TAB>timestamp``. Items seen fewer than ``min_item_count``
    times are dropped first, then users with fewer than ``min_seq_len``
    interactions. Ties in timestamp keep file order.
    """
    path = Path(path)
    if format not in ("ml-ratings", "tsv"):
        raise DatasetError(f"unknown format {format!r}")
    sep, width = ("::", 4) if format == "ml-ratings" else ("\t", 3)
    rows = []
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(sep)
            if len(parts) != width:
                raise DatasetError(f"{path}:{lineno}: malformed line (expected {width} fields)")
            user, item, ts = parts[0], parts[1], parts[-1]
            try:
                ts = float(ts)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed timestamp {ts!r}") from None
            if not user or not item:
                raise DatasetError(f"{path}:{lineno}: empty user or item field")
            rows.append((user, item, ts))
    return from_interactions(rows, source=str(path), min_seq_len=min_seq_len, min_item_count=min_item_count)


def from_interactions(rows, source="", min_seq_len=MIN_SEQ_LEN, min_item_count=1):
    """Build a dataset from ``(user, item, timestamp)`` rows in file order."""
    if min_item_count > 1:
        counts = {}
        for _, it, _ in rows:
            counts[it] = counts.get(it, 0) + 1
        rows = [r for r in rows if counts[r[1]] >= min_item_count]
    per_user = {}
    for order, (u, it, ts) in enumerate(rows):
        per_user.setdefault(str(u), []).append((ts, order, str(it)))
    per_user = {u: ev for u, ev in per_user.items() if len(ev) >= min_seq_len}
    if not per_user:
        raise DatasetError("empty dataset")
    users = sorted(per_user, key=_key)
    items = sorted({it for ev in per_user.values() for _, _, it in ev}, key=_key)
    index = {it: i for i, it in enumerate(items)}
    sequences = []
    for u in users:
        ev = sorted(per_user[u])
        sequences.append(np.array([index[it] for _, _, it in ev], dtype=np.int64))
    return InteractionDataset(users=users, items=items, sequences=sequences, source=source)


def split_leave_last_two(ds):
    train, val, test = [], [], []
    for u, s in zip(ds.users, ds.sequences):
        if len(s) < MIN_SEQ_LEN:
            raise DatasetError(f"user {u} has {len(s)} interactions; the loader should have dropped it")
        train.append(np.asarray(s[:-2], dtype=np.int64))
        val.append(int(s[-2]))
        test.append(int(s[-1]))
    return SplitDataset(train=train, val=np.array(val), test=np.array(test), n_items=ds.n_items, users=list(ds.users))


def sample_few_shot(split, ratio, seed=0):
    """Uniformly pick ``round(ratio * m)`` users; expose only their train views."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    m = split.n_users
    count = int(np.floor(ratio * m + 0.5))
    if count == 0:
        raise ValueError(f"ratio {ratio} of {m} users selects nobody")
    rng = np.random.default_rng(seed)
    users = np.sort(rng.choice(m, size=count, replace=False))
    return FewShotSubset(
        ratio=ratio, users=users, sequences=[split.train[u].copy() for u in users], n_items=split.n_items
    )


def partition_exploit_explore(subset, oracle, k, window=20, ledger="supervision"):
    """Label every (prefix, next) pair by whether the oracle's top-k contains next.

    Prefixes keep their most recent ``window`` items. Queries go to ``ledger``;
    against the attack ledger in per-sequence mode each user history is
    submitted as one sequence.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    prefixes, nexts, owners = [], [], []
    for u, s in zip(subset.users, subset.sequences):
        for j in range(1, len(s)):
            prefixes.append(s[max(0, j - window):j].copy())
            nexts.append(int(s[j]))
            owners.append(int(u))
    if ledger == "attack" and oracle.budget.mode == "per-sequence":
        lists = []
        owners_arr = np.array(owners)
        for u in subset.users:
            idx = np.nonzero(owners_arr == u)[0]
            if not len(idx):
                continue
            token = oracle.open_sequence()
            try:
                lists.extend(oracle.query_topk_many([prefixes[i] for i in idx], k, ledger="attack", token=token))
            finally:
                oracle.close_sequence(token)
    else:
        lists = oracle.query_topk_many(prefixes, k, ledger=ledger)
    lists_arr = np.array([l.items for l in lists], dtype=np.int64).reshape(len(prefixes), k)
    nexts = np.array(nexts, dtype=np.int64)
    labels = (lists_arr == nexts[:, None]).any(1).astype(np.int8)
    return PartitionedRaw(
        prefixes=prefixes,
        next_items=nexts,
        lists=lists_arr,
        labels=labels,
        owners=np.array(owners, dtype=np.int64),
        k=k,
        n_items=subset.n_items,
    )


# ---------------------------------------------------------------------------
# desk-scale fixture
# ---------------------------------------------------------------------------


def markov_interactions(
    n_users=200, n_items=200, seed=0, min_len=20, max_len=50, n_next=4, stay=0.85, groups=1, zipf=1.0
):
    """Seeded Markov-chain interaction log as ``(user, item, ts)`` rows.

    Items carry a popularity ``(rank + 1) ** -zipf`` over a random ranking;
    successor sets and random jumps are drawn by popularity. User ``u``
    starts at entry ``u mod n_items`` of a random item permutation, so every
    item occurs when there are at least as many users as items.
    Items are split into ``groups`` taste groups and every user has a home
    group. Each item has ``n_next`` Dirichlet-weighted successors inside each
    group; with probability ``stay`` a user moves to a successor in their home
    group, otherwise jumps anywhere.
    """
    rng = np.random.default_rng(seed)
    pop = np.empty(n_items)
    pop[rng.permutation(n_items)] = (np.arange(n_items) + 1.0) ** -zipf
    pop /= pop.sum()
    members = np.array_split(rng.permutation(n_items), groups)
    member_p = [pop[m] / pop[m].sum() for m in members]
    succ = np.stack(
        [np.stack([rng.choice(m, n_next, replace=False, p=mp) for m, mp in zip(members, member_p)]) for _ in range(n_items)]
    )  # (n_items, groups, n_next)
    weights = rng.dirichlet(np.ones(n_next), size=(n_items, groups))
    home = rng.integers(groups, size=n_users)
    starts = rng.permutation(n_items)
    rows = []
    for u in range(n_users):
        length = int(rng.integers(min_len, max_len + 1))
        g = int(home[u])
        cur = int(starts[u % n_items])
        for t in range(length):
            rows.append((str(u), str(cur), float(t)))
            if rng.random() < stay:
                cur = int(succ[cur, g, rng.choice(n_next, p=weights[cur, g])])
            else:
                cur = int(rng.choice(n_items, p=pop))
    return rows


def write_tsv(rows, path):
    path = Path(path)
    path.write_text("".join(f"{u}\t{i}\t{int(t)}\n" for u, i, t in rows))
    return path


def write_stats(ds, path):
    Path(path).write_text(json.dumps(ds.stats(), indent=1, sort_keys=True))
