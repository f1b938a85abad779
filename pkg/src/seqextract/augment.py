"""Synthetic query generation guided by a few-shot-trained sampler.

The sampler encodes a history window with self-attention over item metadata
embeddings (each item embedded as its metadata vector concatenated with a
sinusoidal position code) and maps the flattened context matrix to a user
vector. Dot products between the user vector and the metadata embeddings of
the victim's candidate list give per-candidate probabilities (sigmoid, for
training) and a sampling distribution (softmax over the list). A signal head
on the same user vector decides per step whether to exploit the victim's
list or explore the item pool.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .evaluate import roc_auc
from .nn import tensor as T
from .nn.layers import Linear, glorot
from .nn.optim import Adam
from .nn.params import ParameterStore
from .oracle import BudgetExhausted

log = logging.getLogger(__name__)

POLICIES = ("random", "autoregressive", "few-shot")
START, EXPLOIT, EXPLORE = "start", "exploit", "explore"


@dataclass
class SamplerConfig:
    context_len: int = 20
    heads: int = 2
    head_dim: int = 16
    d_model: int = 32
    meta_dim: int = 32
    pos_dim: int = 16
    dropout: float = 0.1
    rho_max: float = 1e4
    pe_mode: str = "scaled"
    decision: str = "bernoulli"
    threshold: float = 0.5

    def errors(self, prefix=""):
        errs = []
        for name in ("context_len", "heads", "head_dim", "d_model", "meta_dim"):
            if getattr(self, name) < 1:
                errs.append((f"{prefix}{name}", "must be >= 1"))
        if self.pos_dim < 0:
            errs.append((f"{prefix}pos_dim", "must be >= 0"))
        if self.heads >= 1 and self.d_model % self.heads:
            errs.append((f"{prefix}d_model", f"must be divisible by heads={self.heads}"))
        if not 0.0 <= self.dropout < 1.0:
            errs.append((f"{prefix}dropout", "must be in [0, 1)"))
        if self.pe_mode not in ("scaled", "literal"):
            errs.append((f"{prefix}pe_mode", "must be 'scaled' or 'literal'"))
        if self.decision not in ("bernoulli", "threshold"):
            errs.append((f"{prefix}decision", "must be 'bernoulli' or 'threshold'"))
        return errs

    def to_dict(self):
        return asdict(self)


@dataclass
class GenerationPlan:
    policy: str = "few-shot"
    sequences: int = 1000
    length: int = 20
    k: int = 20
    seed: int = 0
    chunk: int = 512

    def __post_init__(self):
        if self.policy == "few-shot-augmented":
            self.policy = "few-shot"

    def errors(self, prefix=""):
        errs = []
        if self.policy not in POLICIES:
            errs.append((f"{prefix}policy", f"must be one of {POLICIES}"))
        for name in ("sequences", "length", "k", "chunk"):
            if getattr(self, name) < 1:
                errs.append((f"{prefix}{name}", "must be >= 1"))
        return errs

    def to_dict(self):
        return asdict(self)


def positional_encoding(j, dims, mode="scaled", rho_max=1e4):
    """Sinusoidal code for position ``j``: sin at even slots, cos at odd slots.

    ``mode="literal"`` divides by ``rho_max ** (2m)``; ``"scaled"`` by
    ``rho_max ** (2m / dims)``.
    """
    if j < 0:
        raise ValueError("position must be >= 0")
    m = np.arange(dims) // 2
    expo = 2.0 * m if mode == "literal" else 2.0 * m / max(dims, 1)
    with np.errstate(over="ignore"):
        angle = j / np.power(rho_max, expo)
    return np.where(np.arange(dims) % 2 == 0, np.sin(angle), np.cos(angle))


class SamplerNet:
    def __init__(self, n_items, cfg, store):
        self.n = n_items
        self.pad = n_items
        self.cfg = cfg
        self.store = store
        c, s = cfg, store
        scale = 1.0 / np.sqrt(c.meta_dim)
        self.meta = s.add("sampler.meta", s.init_rng.uniform(-scale, scale, size=(n_items + 1, c.meta_dim)))
        d_in = c.meta_dim + c.pos_dim
        self.q = [Linear(s, f"sampler.q{h}", d_in, c.head_dim) for h in range(c.heads)]
        self.k = [Linear(s, f"sampler.k{h}", d_in, c.head_dim) for h in range(c.heads)]
        self.ffn1 = Linear(s, "sampler.ffn1", c.heads * c.meta_dim, c.d_model)
        self.ffn2 = Linear(s, "sampler.ffn2", c.d_model, c.d_model)
        flat = c.context_len * c.d_model
        self.w_u = s.add("sampler.user.weight", glorot(s.init_rng, flat, c.meta_dim))
        self.b_u = s.add("sampler.user.bias", np.zeros(c.meta_dim))
        pe = np.stack([positional_encoding(j, c.pos_dim, c.pe_mode, c.rho_max) for j in range(c.context_len)])
        self._pe = pe.reshape(c.context_len, c.pos_dim)

    def windows(self, prefixes):
        """Left-pad/truncate prefixes to ``context_len`` ids."""
        L = self.cfg.context_len
        out = np.full((len(prefixes), L), self.pad, dtype=np.int64)
        for i, p in enumerate(prefixes):
            p = np.asarray(p, dtype=np.int64)[-L:]
            if len(p):
                out[i, L - len(p):] = p
        return out

    def embed_items(self, ids):
        """Concatenated metadata embedding and position code, (B, L, meta+pos)."""
        g = T.embedding(self.meta, ids)
        pe = np.broadcast_to(self._pe.astype(g.dtype), ids.shape + (self.cfg.pos_dim,))
        return T.concat([g, T.Tensor(np.ascontiguousarray(pe))], axis=-1), g

    def embed_item(self, item, j):
        if not 0 <= item <= self.pad:
            raise IndexError(f"item id {item} out of range")
        g = self.meta.data[item]
        return np.concatenate([g, positional_encoding(j, self.cfg.pos_dim, self.cfg.pe_mode, self.cfg.rho_max)])

    def attention(self, ids):
        """Per-head attention weights (B, H, Ly, Lx) and concatenated contexts."""
        valid = ids != self.pad
        if not valid.any(1).all():
            raise ValueError("all-padding prefix")
        e, g = self.embed_items(ids)
        mask = valid[:, None, :]
        scale = 1.0 / np.sqrt(self.cfg.d_model)
        weights, heads = [], []
        for q, k in zip(self.q, self.k):
            p = T.matmul(q(e), T.swap_last(k(e))) * scale  # p[y, x] = q_y . k_x
            a = T.softmax(p, axis=-1, mask=mask)  # normalised over source positions x
            weights.append(a)
            heads.append(T.matmul(a, g))
        return weights, T.concat(heads, axis=-1)

    def context(self, ids):
        _, h = self.attention(ids)
        s = self.store
        h = T.dropout(h, self.cfg.dropout, s.rng, s.training)
        return self.ffn2(T.relu(self.ffn1(h)))

    def user_embedding_from_context(self, C):
        B = C.shape[0]
        flat = C.reshape(B, 1, -1)
        return (T.matmul(flat, self.w_u) + self.b_u).reshape(B, -1)

    def user_embedding(self, prefixes):
        return self.user_embedding_from_context(self.context(self.windows(prefixes)))

    def candidate_scores(self, eu, lists):
        """dot(e^u, g_v) for every candidate v: (B, k)."""
        lists = np.asarray(lists, dtype=np.int64)
        gv = T.embedding(self.meta, lists)
        B, k = lists.shape
        return T.matmul(gv, eu.reshape(B, -1, 1)).reshape(B, k)


class SignalHead:
    def __init__(self, cfg, store):
        self.w = store.add("signal.weight", glorot(store.init_rng, cfg.meta_dim, 1))
        self.b = store.add("signal.bias", np.zeros(1))

    def logits(self, eu):
        B = eu.shape[0]
        return (T.matmul(eu.reshape(B, 1, -1), self.w) + self.b).reshape(B)

    def __call__(self, eu):
        return T.sigmoid(self.logits(eu))


def candidate_distribution(net, eu, lists):
    """Returns (per-candidate sigmoid probabilities, softmax sampling distribution)."""
    s = net.candidate_scores(eu, lists)
    return T.sigmoid(s), T.softmax(s, axis=-1)


def sampler_loss(probs, positive_mask, eps=1e-7):
    """Mean over exploit pairs of -[log p(pos) + sum log(1 - p(neg))]."""
    pos = np.asarray(positive_mask, dtype=probs.dtype)
    if pos.shape[0] == 0:
        raise ValueError("empty exploitation set")
    pc = T.clip(probs, eps, 1.0 - eps)
    terms = pos * T.log(pc) + (1.0 - pos) * T.log(1.0 - pc)
    return -T.tsum(terms) * (1.0 / pos.shape[0])


def signal_loss(pred, labels, eps=1e-7):
    """Summed two-sided binary cross-entropy."""
    return T.binary_cross_entropy(pred, labels, eps, reduction="sum")


@dataclass
class Augmentor:
    net: SamplerNet
    head: SignalHead
    store: ParameterStore
    report: dict = field(default_factory=dict)

    def signal(self, prefixes):
        with T.no_grad():
            was = self.store.training
            self.store.eval()
            try:
                eu = self.net.user_embedding(prefixes)
                return eu, self.head(eu)
            finally:
                self.store.train(was)


def build_augmentor(n_items, cfg, seed=0):
    store = ParameterStore(seed)
    return Augmentor(SamplerNet(n_items, cfg, store), SignalHead(cfg, store), store)


def _positive_mask(lists, nexts):
    return (np.asarray(lists) == np.asarray(nexts)[:, None]).astype(np.float32)


def augmentor_aucs(aug, partition, chunk=512):
    """Auc1: positive vs negative candidate probabilities over the exploit pairs.
    Auc2: signal output against the exploit/explore labels over all pairs."""
    probs, preds = [], []
    exploit = partition.labels == 1
    for a in range(0, len(partition), chunk):
        sl = slice(a, a + chunk)
        eu, y = aug.signal(partition.prefixes[sl])
        preds.append(y.data)
        with T.no_grad():
            p, _ = candidate_distribution(aug.net, eu, partition.lists[sl])
        probs.append(p.data)
    probs = np.concatenate(probs) if probs else np.zeros((0, partition.k))
    preds = np.concatenate(preds) if preds else np.zeros(0)
    pos = _positive_mask(partition.lists, partition.next_items)[exploit]
    auc1 = roc_auc(probs[exploit].reshape(-1), pos.reshape(-1)) if exploit.any() else None
    auc2 = roc_auc(preds, partition.labels)
    return auc1, auc2


def train_augmentor(partition, cfg, epochs=50, batch_size=64, lr=1e-3, seed=0):
    """Jointly fit sampler (exploit pairs) and signal head (all pairs)."""
    if len(partition) == 0:
        raise ValueError("empty raw data")
    aug = build_augmentor(partition.n_items, cfg, seed)
    opt = Adam(aug.store, lr=lr)
    rng = np.random.default_rng(seed)
    n_exploit = int((partition.labels == 1).sum())
    if n_exploit == 0:
        log.warning("exploitation set is empty; sampler skipped, signal head still trained")
    pos_all = _positive_mask(partition.lists, partition.next_items)
    history = []
    for epoch in range(1, epochs + 1):
        aug.store.train()
        order = rng.permutation(len(partition))
        tot_s, tot_g = 0.0, 0.0
        for a in range(0, len(order), batch_size):
            idx = order[a:a + batch_size]
            eu = aug.net.user_embedding([partition.prefixes[i] for i in idx])
            labels = partition.labels[idx]
            loss = signal_loss(aug.head(eu), labels) * (1.0 / len(idx))
            tot_g += float(loss.data) * len(idx)
            ex = np.nonzero(labels == 1)[0]
            if len(ex):
                p, _ = candidate_distribution(aug.net, eu[ex], partition.lists[idx[ex]])
                ls = sampler_loss(p, pos_all[idx[ex]])
                tot_s += float(ls.data) * len(ex)
                loss = loss + ls
            if not np.isfinite(float(loss.data)):
                raise T.NaNError(f"augmentor training diverged at epoch {epoch}")
            loss.backward()
            opt.step()
        history.append(
            {"epoch": epoch, "sampler_loss": tot_s / max(n_exploit, 1), "signal_loss": tot_g / len(partition)}
        )
    aug.store.eval()
    auc1, auc2 = augmentor_aucs(aug, partition)
    aug.report = {
        "auc1": auc1,
        "auc2": auc2,
        "exploit_pairs": n_exploit,
        "explore_pairs": int(len(partition) - n_exploit),
        "history": history,
    }
    return aug


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSequence:
    items: np.ndarray
    lists: np.ndarray
    modes: list
    policy: str
    seed: int = 0

    def to_json(self):
        return {
            "items": [int(x) for x in self.items],
            "lists": self.lists.tolist(),
            "modes": list(self.modes),
            "policy": self.policy,
            "seed": int(self.seed),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            items=np.asarray(d["items"], dtype=np.int64),
            lists=np.asarray(d["lists"], dtype=np.int64),
            modes=list(d["modes"]),
            policy=d["policy"],
            seed=int(d.get("seed", 0)),
        )


class GenerationInterrupted(BudgetExhausted):
    """Budget ran out mid-generation; ``completed`` holds the finished sequences."""

    def __init__(self, cause, completed):
        super().__init__(cause.ledger, cause.limit, cause.used, progress=len(completed))
        self.completed = completed


def _choose_from_lists(lists, probs, u):
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    idx = np.minimum((u[:, None] >= cdf).sum(1), lists.shape[1] - 1)
    return lists[np.arange(len(lists)), idx]


def _generate_chunk(plan, query, aug, rng, b, n):
    """Generate ``b`` sequences step-synchronously; ``query(prefixes, owner_rows)``
    returns an int array (len(prefixes), k)."""
    nu, k = plan.length, plan.k
    rows = np.arange(b)
    seqs = np.zeros((b, nu), dtype=np.int64)
    modes = np.full((b, nu), EXPLORE if plan.policy == "random" else EXPLOIT, dtype=object)
    modes[:, 0] = START

    if plan.policy == "random":
        seqs[:] = rng.integers(n, size=(b, nu))
        owners = np.repeat(rows, nu)
        lists = query([seqs[i, :t] for i in rows for t in range(1, nu + 1)], owners)
        return seqs, lists.reshape(b, nu, k), modes

    seqs[:, 0] = rng.integers(n, size=b)
    lists = np.zeros((b, nu, k), dtype=np.int64)
    for t in range(1, nu + 1):
        lists[:, t - 1] = query([seqs[i, :t] for i in rows], rows)
        if t == nu:
            break
        cur = lists[:, t - 1]
        if plan.policy == "autoregressive":
            seqs[:, t] = cur[rows, rng.integers(k, size=b)]
            continue
        # draw every stream for every row so the rng stays aligned across branches
        u_mode, u_pick, u_explore = rng.random(b), rng.random(b), rng.random((b, 1))
        eu, y = aug.signal([seqs[i, :t] for i in rows])
        y = y.data.astype(np.float64)
        cfg = aug.net.cfg
        exploit = u_mode < y if cfg.decision == "bernoulli" else y >= cfg.threshold
        with T.no_grad():
            _, dist = candidate_distribution(aug.net, eu, cur)
        picked = _choose_from_lists(cur, dist.data.astype(np.float64), u_pick)
        explored = kernels.sample_excluding(n, seqs[:, :t], u_explore)[:, 0]
        seqs[:, t] = np.where(exploit, picked, explored)
        modes[:, t] = np.where(exploit, EXPLOIT, EXPLORE)
    return seqs, lists, modes


def generate_sequences(plan, oracle, augmentor=None):
    """Generate ``plan.sequences`` synthetic sequences with their per-prefix lists.

    Sequences are produced in chunks, step-synchronously within a chunk. In
    per-sequence charging mode each sequence opens (and pays for) one token.
    When the budget runs out the interrupted chunk is discarded and
    :class:`GenerationInterrupted` carries the completed sequences.
    """
    errs = plan.errors()
    if errs:
        raise ValueError("; ".join(f"{p}: {m}" for p, m in errs))
    if plan.policy == "few-shot" and augmentor is None:
        raise ValueError("few-shot policy needs a trained augmentor")
    n = oracle.n_items
    if plan.k > n:
        raise ValueError("list length exceeds item count")
    rng = np.random.default_rng(plan.seed)
    per_seq = oracle.budget.mode == "per-sequence"
    out = []
    for a in range(0, plan.sequences, plan.chunk):
        b = min(plan.chunk, plan.sequences - a)
        tokens, short = None, False
        if per_seq:
            rem = oracle.budget.remaining("attack")
            if rem is not None and 0 < rem < b:
                b, short = rem, True
            try:
                tokens = oracle.open_many(b)
            except BudgetExhausted as e:
                raise GenerationInterrupted(e, out) from e

            def query(prefixes, owners, tokens=tokens):
                res = oracle.query_topk_many(prefixes, plan.k, "attack", tokens=[tokens[o] for o in owners])
                return np.array([r.items for r in res], dtype=np.int64)
        else:

            def query(prefixes, owners):
                res = oracle.query_topk_many(prefixes, plan.k, "attack")
                return np.array([r.items for r in res], dtype=np.int64)

        try:
            seqs, lists, modes = _generate_chunk(plan, query, augmentor, rng, b, n)
        except BudgetExhausted as e:
            raise GenerationInterrupted(e, out) from e
        finally:
            for tok in tokens or ():
                oracle.close_sequence(tok)
        for i in range(b):
            out.append(SyntheticSequence(seqs[i], lists[i], list(modes[i]), plan.policy, plan.seed))
        if short:
            lim = oracle.budget.limits["attack"]
            raise GenerationInterrupted(BudgetExhausted("attack", lim, lim), out)
    return out


def save_corpus(corpus, path):
    with Path(path).open("w") as fh:
        for s in corpus:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def load_corpus(path):
    with Path(path).open() as fh:
        return [SyntheticSequence.from_json(json.loads(line)) for line in fh if line.strip()]
