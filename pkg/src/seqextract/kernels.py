"""Hot integer/ranking kernels.

Every kernel exists twice: a ``*_numba`` version compiled with ``@njit`` and a
``*_numpy`` version built from vectorized numpy. Both produce identical
outputs for identical inputs (they are tested against each other); the public
name binds to one of them according to :data:`seqextract._accel.USE_NUMBA`.

Ordering convention everywhere: descending score, ties broken by ascending
item id.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# top-k with id tie-break
# ---------------------------------------------------------------------------


def topk_rows_numpy(scores, k):
    scores = np.asarray(scores)
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


@njit
def topk_rows_numba(scores, k):
    P, n = scores.shape
    out = np.empty((P, k), dtype=np.int64)
    buf_s = np.empty(k, dtype=np.float64)
    for p in range(P):
        filled = 0
        for i in range(n):
            s = scores[p, i]
            if filled == k and not s > buf_s[k - 1]:
                continue
            # later ids lose ties, so insert after every entry with score >= s
            pos = filled if filled < k else k - 1
            while pos > 0 and buf_s[pos - 1] < s:
                pos -= 1
            last = filled if filled < k else k - 1
            j = last
            while j > pos:
                buf_s[j] = buf_s[j - 1]
                out[p, j] = out[p, j - 1]
                j -= 1
            buf_s[pos] = s
            out[p, pos] = i
            if filled < k:
                filled += 1
    return out


# ---------------------------------------------------------------------------
# full-ranking positions of selected items
# ---------------------------------------------------------------------------


def ranks_of_numpy(scores, items, chunk=512):
    scores = np.asarray(scores)
    items = np.asarray(items, dtype=np.int64)
    P, n = scores.shape
    out = np.empty(items.shape, dtype=np.int64)
    ids = np.arange(n)
    for a in range(0, P, chunk):
        s = scores[a:a + chunk]
        it = items[a:a + chunk]
        sv = np.take_along_axis(s, it, axis=1)[:, :, None]
        higher = s[:, None, :] > sv
        tied_before = (s[:, None, :] == sv) & (ids[None, None, :] < it[:, :, None])
        out[a:a + chunk] = 1 + higher.sum(-1) + tied_before.sum(-1)
    return out


@njit
def ranks_of_numba(scores, items):
    P, n = scores.shape
    m = items.shape[1]
    out = np.empty((P, m), dtype=np.int64)
    for p in range(P):
        for w in range(m):
            v = items[p, w]
            sv = scores[p, v]
            r = 1
            for i in range(n):
                s = scores[p, i]
                if s > sv or (s == sv and i < v):
                    r += 1
            out[p, w] = r
    return out


# ---------------------------------------------------------------------------
# repair-set mining
# ---------------------------------------------------------------------------
# Inputs per prefix row: black list (k ids), white top-k (k ids), and the full
# white rank of every black item. Output: padded (P, k) arrays of
# underestimated/overestimated items and their targets, -1 where unused.


def repair_pairs_numpy(black, white_top, white_rank):
    black = np.asarray(black, dtype=np.int64)
    white_top = np.asarray(white_top, dtype=np.int64)
    white_rank = np.asarray(white_rank, dtype=np.int64)
    P, k = black.shape
    in_black = (white_top[:, :, None] == black[:, None, :]).any(-1)
    pos = np.broadcast_to(np.arange(k), (P, k))
    # next_free[p, q]: smallest position >= q holding a non-black item (k if none)
    nxt = np.where(in_black, k, pos)
    next_free = np.minimum.accumulate(nxt[:, ::-1], axis=1)[:, ::-1]
    # prev_free[p, q]: largest position <= q holding a non-black item (-1 if none)
    prv = np.where(in_black, -1, pos)
    prev_free = np.maximum.accumulate(prv, axis=1)

    rb = np.arange(k)[None, :].repeat(P, 0)  # zero-based black position
    rw = white_rank - 1
    rows = np.arange(P)[:, None]

    low_pos = next_free[rows, rb]
    low_ok = (rw > rb) & (low_pos < k)
    high_pos = prev_free[rows, rb]
    high_ok = (rw < rb) & (high_pos >= 0)

    low_t = np.take_along_axis(white_top, np.clip(low_pos, 0, k - 1), axis=1)
    high_t = np.take_along_axis(white_top, np.clip(high_pos, 0, k - 1), axis=1)

    def compact(ok, v, t):
        # stable left-pack of selected entries, preserving black-list order
        order = np.argsort(~ok, axis=1, kind="stable")
        okc = np.take_along_axis(ok, order, axis=1)
        vv = np.where(okc, np.take_along_axis(v, order, axis=1), -1)
        tt = np.where(okc, np.take_along_axis(t, order, axis=1), -1)
        return vv, tt, ok.sum(1)

    lv, lt, ln = compact(low_ok, black, low_t)
    hv, ht, hn = compact(high_ok, black, high_t)
    return lv, lt, ln, hv, ht, hn


@njit
def repair_pairs_numba(black, white_top, white_rank):
    P, k = black.shape
    lv = np.full((P, k), -1, dtype=np.int64)
    lt = np.full((P, k), -1, dtype=np.int64)
    hv = np.full((P, k), -1, dtype=np.int64)
    ht = np.full((P, k), -1, dtype=np.int64)
    ln = np.zeros(P, dtype=np.int64)
    hn = np.zeros(P, dtype=np.int64)
    in_black = np.zeros(k, dtype=np.bool_)
    for p in range(P):
        for q in range(k):
            hit = False
            for w in range(k):
                if white_top[p, q] == black[p, w]:
                    hit = True
                    break
            in_black[q] = hit
        for w in range(k):
            rw = white_rank[p, w] - 1
            if rw > w:
                q = w
                while q < k and in_black[q]:
                    q += 1
                if q < k:
                    lv[p, ln[p]] = black[p, w]
                    lt[p, ln[p]] = white_top[p, q]
                    ln[p] += 1
            elif rw < w:
                q = w
                while q >= 0 and in_black[q]:
                    q -= 1
                if q >= 0:
                    hv[p, hn[p]] = black[p, w]
                    ht[p, hn[p]] = white_top[p, q]
                    hn[p] += 1
    return lv, lt, ln, hv, ht, hn


# ---------------------------------------------------------------------------
# uniform sampling without replacement from [0, n) minus an exclusion list
# ---------------------------------------------------------------------------
# Randomness comes in as uniforms ``u`` in [0, 1) so both paths consume the
# exact same draws: partial Fisher-Yates over the ascending allowed pool.


def sample_excluding_numpy(n, exclude, u):
    exclude = np.asarray(exclude, dtype=np.int64)
    u = np.asarray(u, dtype=np.float64)
    P, m = u.shape
    mask = np.ones((P, n), dtype=bool)
    np.put_along_axis(mask, exclude, False, axis=1)
    counts = mask.sum(1)
    if (counts < m).any():
        raise ValueError("pool too small for the requested sample")
    if (counts != counts[0]).any():
        # ragged pools: fall back to per-row processing
        return np.stack([sample_excluding_numpy(n, exclude[i:i + 1], u[i:i + 1])[0] for i in range(P)])
    cnt = int(counts[0])
    pool = np.nonzero(mask)[1].reshape(P, cnt)
    rows = np.arange(P)
    for w in range(m):
        j = w + np.floor(u[:, w] * (cnt - w)).astype(np.int64)
        a = pool[rows, w].copy()
        pool[rows, w] = pool[rows, j]
        pool[rows, j] = a
    return pool[:, :m].copy()


@njit
def sample_excluding_numba(n, exclude, u):
    P, m = u.shape
    out = np.empty((P, m), dtype=np.int64)
    mask = np.ones(n, dtype=np.bool_)
    pool = np.empty(n, dtype=np.int64)
    for p in range(P):
        for e in range(exclude.shape[1]):
            mask[exclude[p, e]] = False
        cnt = 0
        for i in range(n):
            if mask[i]:
                pool[cnt] = i
                cnt += 1
        for e in range(exclude.shape[1]):
            mask[exclude[p, e]] = True
        if cnt < m:
            raise ValueError("pool too small for the requested sample")
        for w in range(m):
            j = w + np.int64(np.floor(u[p, w] * (cnt - w)))
            a = pool[w]
            pool[w] = pool[j]
            pool[j] = a
            out[p, w] = pool[w]
    return out


if USE_NUMBA:
    def topk_rows(scores, k):
        return topk_rows_numba(np.ascontiguousarray(scores), int(k))

    def ranks_of(scores, items):
        return ranks_of_numba(np.ascontiguousarray(scores), np.ascontiguousarray(items, dtype=np.int64))

    def repair_pairs(black, white_top, white_rank):
        return repair_pairs_numba(
            np.ascontiguousarray(black, dtype=np.int64),
            np.ascontiguousarray(white_top, dtype=np.int64),
            np.ascontiguousarray(white_rank, dtype=np.int64),
        )

    def sample_excluding(n, exclude, u):
        return sample_excluding_numba(
            int(n), np.ascontiguousarray(exclude, dtype=np.int64), np.ascontiguousarray(u, dtype=np.float64)
        )
else:
    topk_rows = topk_rows_numpy
    ranks_of = ranks_of_numpy
    repair_pairs = repair_pairs_numpy
    sample_excluding = sample_excluding_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
