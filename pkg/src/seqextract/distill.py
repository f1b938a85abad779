"""Surrogate training from cached top-k lists: pair-wise rank loss plus
bidirectional repair losses."""

import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .nn import tensor as T
from .nn.optim import Adam

log = logging.getLogger(__name__)

# (rank_margin, negative_margin) per dataset profile
MARGIN_PROFILES = {"ml-1m": (0.75, 1.5), "steam": (0.5, 1.0), "beauty": (0.5, 0.5)}


@dataclass
class LossWeights:
    rank_margin: float = 0.75
    negative_margin: float = 1.5
    low_margin: float = 0.5
    high_margin: float = 0.5
    low_weight: float = 1e-5
    high_weight: float = 1e-6

    @classmethod
    def for_profile(cls, tag, **overrides):
        rank, neg = MARGIN_PROFILES.get(tag, MARGIN_PROFILES["ml-1m"])
        return cls(rank_margin=rank, negative_margin=neg, **overrides)

    def errors(self, prefix=""):
        errs = []
        for name in ("rank_margin", "negative_margin", "low_margin", "high_margin"):
            if getattr(self, name) < 0:
                errs.append((f"{prefix}{name}", "margins must be >= 0"))
        for name in ("low_weight", "high_weight"):
            if getattr(self, name) < 0:
                errs.append((f"{prefix}{name}", "scale factors must be >= 0"))
        return errs

    def to_dict(self):
        return asdict(self)


@dataclass
class RepairSets:
    low_items: list
    low_targets: list
    high_items: list
    high_targets: list

    @property
    def empty(self):
        return not self.low_items and not self.high_items


def sample_negatives(k, n_items, exclude, seed=None, uniforms=None):
    """``k`` distinct ids per row, uniform over the pool minus that row's ``exclude``.

    ``exclude`` is one list or a (P, m) array. Randomness comes from
    ``uniforms`` (P, k) when given, else from ``seed``.
    """
    exclude = np.asarray(exclude, dtype=np.int64)
    single = exclude.ndim == 1
    ex = exclude.reshape(1, -1) if single else exclude
    if uniforms is None:
        uniforms = np.random.default_rng(seed).random((len(ex), k))
    out = kernels.sample_excluding(n_items, ex, np.asarray(uniforms, dtype=np.float64))
    return out[0] if single else out


def pairwise_rank_loss(list_scores, neg_scores, rank_margin, negative_margin):
    """Mean over prefixes of the adjacency hinge and the list-vs-negative hinge.

    ``list_scores`` (P, k) follow the victim's order; ``neg_scores`` (P, k).
    """
    P, k = list_scores.shape
    neg = T.hinge(neg_scores - list_scores + negative_margin)
    per = T.mean(neg, axis=1)
    if k >= 2:
        adj = T.hinge(list_scores[:, 1:] - list_scores[:, :-1] + rank_margin)
        per = per + T.mean(adj, axis=1)
    else:
        warnings.warn("list length < 2: adjacency term disabled", stacklevel=2)
    return T.mean(per)


def compute_repair_sets(black, white, n_items=None):
    """Repair pairs for one prefix given the black-box list and the surrogate's full ranking."""
    black = np.asarray(black, dtype=np.int64)
    white = np.asarray(white, dtype=np.int64)
    n = len(white) if n_items is None else n_items
    if len(white) != n or not np.array_equal(np.sort(white), np.arange(n)):
        raise ValueError("surrogate ranking must be a full ranking of the item pool")
    k = len(black)
    inv = np.empty(len(white), dtype=np.int64)
    inv[white] = np.arange(1, len(white) + 1)
    lv, lt, ln, hv, ht, hn = kernels.repair_pairs(black[None], white[None, :k], inv[black][None])
    return RepairSets(
        low_items=[int(x) for x in lv[0, : ln[0]]],
        low_targets=[int(x) for x in lt[0, : ln[0]]],
        high_items=[int(x) for x in hv[0, : hn[0]]],
        high_targets=[int(x) for x in ht[0, : hn[0]]],
    )


def repair_sets_batch(black, scores):
    """Padded repair arrays for rows of black lists (P, k) against score rows (P, n)."""
    black = np.asarray(black, dtype=np.int64)
    k = black.shape[1]
    white_top = kernels.topk_rows(scores, k)
    white_rank = kernels.ranks_of(scores, black)
    return kernels.repair_pairs(black, white_top, white_rank)


def _pair_hinge(scores, items, targets, counts, margin, sign):
    valid = items >= 0
    if not valid.any():
        return T.Tensor(np.zeros((), dtype=scores.dtype))
    a = T.take_along(scores, np.where(valid, items, 0), axis=1)
    b = T.take_along(scores, np.where(valid, targets, 0), axis=1)
    diff = (b - a) if sign > 0 else (a - b)
    h = T.hinge(diff + margin) * valid.astype(scores.dtype)
    per = T.tsum(h, axis=1) * (1.0 / np.maximum(counts, 1)).astype(scores.dtype)
    return T.mean(per)


def repair_losses(scores, sets, low_margin, high_margin):
    """(low, high) hinge losses; per-prefix means then averaged over prefixes.

    ``scores`` is a (P, n) Tensor; ``sets`` either a RepairSets (P = 1) or
    the padded tuple from :func:`repair_sets_batch`.
    """
    if isinstance(sets, RepairSets):
        k = max(len(sets.low_items), len(sets.high_items), 1)

        def pad(xs):
            return np.array([list(xs) + [-1] * (k - len(xs))], dtype=np.int64)

        sets = (
            pad(sets.low_items), pad(sets.low_targets), np.array([len(sets.low_items)]),
            pad(sets.high_items), pad(sets.high_targets), np.array([len(sets.high_items)]),
        )
    lv, lt, ln, hv, ht, hn = sets
    low = _pair_hinge(scores, lv, lt, ln, low_margin, +1)  # target should sit below the item
    high = _pair_hinge(scores, hv, ht, hn, high_margin, -1)  # item should sit below the target
    return low, high


def total_loss(extract, low, high, weights):
    total = extract
    if weights.low_weight:
        total = total + low * weights.low_weight
    if weights.high_weight:
        total = total + high * weights.high_weight
    return total


def _corpus_arrays(corpus):
    if not corpus:
        raise ValueError("empty corpus")
    seqs = np.stack([np.asarray(s.items, dtype=np.int64) for s in corpus])
    lists = []
    for i, s in enumerate(corpus):
        li = np.asarray(s.lists, dtype=np.int64)
        if li.ndim != 2 or li.shape[0] != len(s.items):
            raise ValueError(f"sequence {i}: missing cached list for some prefix")
        lists.append(li)
    return seqs, np.stack(lists)


def agreement_vs_cache(surrogate, seqs, lists, K=10, chunk=64):
    """Mean Agr@K between the surrogate's top-K and the cached list for every prefix."""
    K = min(K, lists.shape[-1])
    hits, total = 0, 0
    was = surrogate.store.training
    surrogate.store.eval()
    try:
        with T.no_grad():
            for a in range(0, len(seqs), chunk):
                logits = surrogate.sequence_logits(seqs[a:a + chunk]).data
                top = kernels.topk_rows(logits.reshape(-1, logits.shape[-1]), K)
                cached = lists[a:a + chunk].reshape(-1, lists.shape[-1])[:, :K]
                hits += int((top[:, :, None] == cached[:, None, :]).any(-1).sum())
                total += top.size
    finally:
        surrogate.store.train(was)
    return hits / total


def distill_train(
    surrogate, corpus, weights=None, epochs=200, batch_size=64, lr=1e-3, seed=0, agr_every=10, log_path=None,
    callback=None,
):
    """Fit ``surrogate`` to the cached lists of ``corpus``.

    Every prefix of every sequence contributes one rank-loss term; negatives
    are redrawn per (epoch, sequence). Repair sets come from the live
    surrogate's eval-mode ranking of the batch. Returns (surrogate, log records).
    """
    weights = weights or LossWeights()
    seqs, lists = _corpus_arrays(corpus)
    mu, nu, k = lists.shape
    n = surrogate.n
    if lists.max() >= n or seqs.max() >= n:
        raise ValueError("corpus item ids exceed the surrogate's item count")
    use_repair = bool(weights.low_weight or weights.high_weight)
    opt = Adam(surrogate.store, lr=lr)
    rng = np.random.default_rng(seed)
    surrogate.store.reseed(seed)
    records = [{"epoch": 0, "agr@10": agreement_vs_cache(surrogate, seqs, lists)}]
    for epoch in range(1, epochs + 1):
        surrogate.store.train()
        order = rng.permutation(mu)
        sums = {"extract": 0.0, "low": 0.0, "high": 0.0, "total": 0.0}
        batches = 0
        for a in range(0, mu, batch_size):
            idx = order[a:a + batch_size]
            b = len(idx)
            blk = lists[idx].reshape(b * nu, k)
            u = np.concatenate(
                [np.random.default_rng([seed, epoch, int(i)]).random((nu, k)) for i in idx]
            )
            negs = kernels.sample_excluding(n, blk, u)
            logits = surrogate.sequence_logits(seqs[idx]).reshape(b * nu, n)
            extract = pairwise_rank_loss(
                T.take_along(logits, blk, axis=1), T.take_along(logits, negs, axis=1),
                weights.rank_margin, weights.negative_margin,
            )
            low = high = None
            if use_repair:
                surrogate.store.eval()
                with T.no_grad():
                    ranking = surrogate.sequence_logits(seqs[idx]).data.reshape(b * nu, n)
                surrogate.store.train()
                low, high = repair_losses(logits, repair_sets_batch(blk, ranking), weights.low_margin, weights.high_margin)
            loss = total_loss(extract, low, high, weights)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise T.NaNError(f"distillation diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            sums["extract"] += float(extract.data)
            sums["total"] += lv
            if use_repair:
                sums["low"] += float(low.data)
                sums["high"] += float(high.data)
            batches += 1
        rec = {"epoch": epoch, **{f"{key}_loss": v / batches for key, v in sums.items()}}
        if (agr_every and epoch % agr_every == 0) or epoch == epochs:
            rec["agr@10"] = agreement_vs_cache(surrogate, seqs, lists)
        records.append(rec)
        log.debug("distill epoch %d %s", epoch, rec)
        if callback is not None:
            callback(rec)
    surrogate.store.eval()
    if log_path is not None:
        with Path(log_path).open("w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    return surrogate, records
