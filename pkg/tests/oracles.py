"""Independent brute-force references shared by the unit and acceptance tests.

None of these import the package; they restate each rule with plain loops.
"""

import math


def prose_repair_oracle(black, white):
    """Repair pairs coded straight from the rule, no shared helpers.

    For each black item v (black rank rb, white rank rw, both 1-based):
    rw > rb: walk white positions rb, rb+1, ... up to k, take the first one
    whose item is not in the black list; rw < rb: walk rb, rb-1, ... down to 1.
    """
    k = len(black)
    bset = set(black)
    low_v, low_t, high_v, high_t = [], [], [], []
    for rb0, v in enumerate(black):
        rb = rb0 + 1
        rw = white.index(v) + 1
        if rw > rb:
            for pos in range(rb, k + 1):
                if white[pos - 1] not in bset:
                    low_v.append(v)
                    low_t.append(white[pos - 1])
                    break
        elif rw < rb:
            for pos in range(rb, 0, -1):
                if white[pos - 1] not in bset:
                    high_v.append(v)
                    high_t.append(white[pos - 1])
                    break
    return low_v, low_t, high_v, high_t


def pair_count_auc(scores, labels):
    """Share of (positive, negative) pairs ordered correctly; ties count half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    if not pos or not neg:
        return None
    good = 0.0
    for p in pos:
        for q in neg:
            good += 1.0 if p > q else 0.5 if p == q else 0.0
    return good / (len(pos) * len(neg))


def sorted_rank(scores_by_item, target):
    """1-based position of ``target`` after sorting candidates by (-score, id)."""
    order = sorted(scores_by_item.items(), key=lambda kv: (-kv[1], kv[0]))
    return [item for item, _ in order].index(target) + 1


def rank_metrics_from_scores(cases, ks):
    """``cases``: list of (scores_by_item, target). Returns {N@k, R@k} means."""
    out = {}
    ranks = [sorted_rank(s, t) for s, t in cases]
    for k in ks:
        out[f"N@{k}"] = sum(1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks) / len(ranks)
        out[f"R@{k}"] = sum(1.0 if r <= k else 0.0 for r in ranks) / len(ranks)
    return out


def overlap_agreement(a, b, k):
    return len(set(a[:k]) & set(b[:k])) / k
