"""Sequential recommenders (NARM, SASRec, BERT4Rec) and victim training.

All forward passes run on right-padded windows of exactly ``max_len``
positions laid out as (batch, max_len, dim) stacks. numpy's stacked matmul
computes each row with the same kernel regardless of batch size, so a
prefix's scores depend only on the prefix, not on what it was batched with.
For the causal models (SASRec, NARM) the output at position ``j - 1`` of a
full sequence equals the score of its length-``j`` prefix.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .nn import tensor as T
from .nn.checkpoint import CheckpointError, load_arrays, save_checkpoint
from .nn.layers import Embedding, FeedForward, GRUCell, LayerNorm, Linear, MultiHeadAttention, causal_mask
from .nn.optim import Adam
from .nn.params import ParameterStore

log = logging.getLogger(__name__)

ARCHITECTURES = ("NARM", "SASRec", "BERT4Rec")


@dataclass
class ModelConfig:
    architecture: str = "SASRec"
    n_items: int = 0
    dim: int = 64
    layers: int = 2
    heads: int = 2
    gru_layers: int = 1
    dropout: float = 0.1
    mask_prob: float | None = None
    max_len: int = 50

    def errors(self, prefix=""):
        errs = []
        if self.architecture not in ARCHITECTURES:
            errs.append((f"{prefix}architecture", f"unknown architecture {self.architecture!r}"))
        for name in ("n_items", "dim", "layers", "heads", "gru_layers", "max_len"):
            if getattr(self, name) <= 0:
                errs.append((f"{prefix}{name}", "must be > 0"))
        if not 0.0 <= self.dropout < 1.0:
            errs.append((f"{prefix}dropout", "must be in [0, 1)"))
        if self.architecture == "BERT4Rec":
            if self.mask_prob is None or not 0.0 < self.mask_prob < 1.0:
                errs.append((f"{prefix}mask_prob", "BERT4Rec needs a mask probability in (0, 1)"))
        elif self.mask_prob is not None:
            errs.append((f"{prefix}mask_prob", "mask probability only applies to BERT4Rec"))
        if self.architecture in ("SASRec", "BERT4Rec") and self.heads > 0 and self.dim % self.heads:
            errs.append((f"{prefix}heads", f"dim {self.dim} not divisible by {self.heads} heads"))
        return errs

    def validate(self):
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(f"{p}: {m}" for p, m in errs))
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class SequentialRecommender:
    """Base class; subclasses implement ``_encode`` and ``_logits``."""

    architecture = None

    def __init__(self, cfg, seed=0):
        cfg.validate()
        if cfg.architecture != self.architecture:
            raise ValueError(f"config architecture {cfg.architecture} != {self.architecture}")
        self.cfg = cfg
        self.n = cfg.n_items
        self.pad = cfg.n_items
        self.store = ParameterStore(seed)
        self._build()

    # subclass hooks --------------------------------------------------------
    def _build(self):
        raise NotImplementedError

    def _encode(self, seqs):
        """(B, max_len) ids -> (B, max_len, d) hidden Tensor."""
        raise NotImplementedError

    def _logits(self, hidden):
        raise NotImplementedError

    @property
    def window(self):
        """Most recent items a prefix keeps."""
        return self.cfg.max_len

    # shared machinery -------------------------------------------------------
    def _check_prefix(self, prefix):
        prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
        if prefix.size == 0:
            raise ValueError("empty prefix")
        if prefix.min() < 0 or prefix.max() >= self.n:
            raise ValueError(f"unknown item id in prefix (valid range [0, {self.n}))")
        return prefix[-self.window:]

    def pad_rows(self, rows):
        L = self.cfg.max_len
        out = np.full((len(rows), L), self.pad, dtype=np.int64)
        for i, r in enumerate(rows):
            out[i, :len(r)] = r
        return out

    def _prefix_inputs(self, windows):
        """Padded input rows and the position whose output scores each prefix."""
        return self.pad_rows(windows), np.array([len(w) - 1 for w in windows], dtype=np.int64)

    def score_prefixes(self, prefixes, chunk=256):
        """Scores over all items for each prefix (eval mode, no graph)."""
        windows = [self._check_prefix(p) for p in prefixes]
        out = np.empty((len(windows), self.n), dtype=np.float32)
        was = self.store.training
        self.store.eval()
        try:
            with T.no_grad():
                for a in range(0, len(windows), chunk):
                    rows, pos = self._prefix_inputs(windows[a:a + chunk])
                    out[a:a + chunk] = self._prefix_logits(rows, pos).data
        finally:
            self.store.train(was)
        return out

    def _prefix_logits(self, rows, pos):
        # logits over the whole window, then pick: keeps the gemm row count at
        # max_len on every path so results are bit-identical across paths
        full = self._logits(self._encode(rows))
        return T.getitem(full, (np.arange(len(pos)), pos))

    def score_next(self, prefix):
        return self.score_prefixes([prefix])[0]

    def sequence_logits(self, seqs):
        """Scores after every prefix of each sequence: (B, L, n) Tensor.

        ``seqs`` is a (B, L) array of full-length sequences. Causal models do
        this in one pass when ``L <= max_len``; otherwise each prefix is
        scored as its own row.
        """
        seqs = np.asarray(seqs, dtype=np.int64)
        B, L = seqs.shape
        if self.architecture in ("SASRec", "NARM") and L <= self.cfg.max_len:
            full = self._logits(self._encode(self.pad_rows(list(seqs))))
            return full[:, :L] if L < self.cfg.max_len else full
        windows = [s[max(0, j + 1 - self.window):j + 1] for s in seqs for j in range(L)]
        rows, pos = self._prefix_inputs(windows)
        return self._prefix_logits(rows, pos).reshape(B, L, self.n)

    def topk(self, prefixes, k):
        return kernels.topk_rows(self.score_prefixes(prefixes), k)

    def num_parameters(self):
        return self.store.num_parameters()

    def copy(self):
        twin = build_model(self.cfg, self.store.seed)
        twin.store.load_state_dict(self.store.state_dict())
        return twin

    def item_weight(self):
        return self.item_emb.weight


class SASRec(SequentialRecommender):
    architecture = "SASRec"

    def _build(self):
        c, s = self.cfg, self.store
        self.item_emb = Embedding(s, "item_emb", self.n + 1, c.dim)
        self.pos_emb = Embedding(s, "pos_emb", c.max_len, c.dim)
        self.blocks = []
        for i in range(c.layers):
            self.blocks.append(
                (
                    LayerNorm(s, f"block{i}.ln_attn", c.dim),
                    MultiHeadAttention(s, f"block{i}.attn", c.dim, c.heads, c.dropout),
                    LayerNorm(s, f"block{i}.ln_ffn", c.dim),
                    FeedForward(s, f"block{i}.ffn", c.dim, c.dim, "relu", c.dropout),
                )
            )
        self.ln_out = LayerNorm(s, "ln_out", c.dim)

    def _encode(self, seqs):
        s = self.store
        L = seqs.shape[1]
        valid = (seqs != self.pad)[:, :, None].astype(s["item_emb.weight"].dtype)
        x = self.item_emb(seqs) + self.pos_emb.weight[:L]
        x = T.dropout(x, self.cfg.dropout, s.rng, s.training) * valid
        mask = causal_mask(L)[None, None] & (seqs != self.pad)[:, None, None, :]
        for ln_a, attn, ln_f, ffn in self.blocks:
            q = ln_a(x)
            x = q + attn(q, x, mask)
            x = ln_f(x)
            x = (x + ffn(x)) * valid
        return self.ln_out(x)

    def _logits(self, hidden):
        return T.matmul(hidden, T.transpose(self.item_emb.weight[: self.n]))


class NARM(SequentialRecommender):
    architecture = "NARM"

    def _build(self):
        c, s = self.cfg, self.store
        self.item_emb = Embedding(s, "item_emb", self.n + 1, c.dim)
        self.grus = [GRUCell(s, f"gru{i}", c.dim, c.dim) for i in range(c.gru_layers)]
        self.a1 = Linear(s, "attn.a1", c.dim, c.dim, bias=False)
        self.a2 = Linear(s, "attn.a2", c.dim, c.dim, bias=False)
        self.v = Linear(s, "attn.v", c.dim, 1, bias=False)
        self.bilinear = Linear(s, "bilinear", 2 * c.dim, c.dim, bias=False)

    def _encode(self, seqs):
        s, d = self.store, self.cfg.dim
        B, L = seqs.shape
        x = T.dropout(self.item_emb(seqs), self.cfg.dropout, s.rng, s.training)
        for gru in self.grus:
            xp = gru.input_proj(x)
            h = T.Tensor(np.zeros((B, 1, d), dtype=x.dtype))
            states = []
            for t in range(L):
                h = gru.step(xp[:, t:t + 1], h)
                states.append(h)
            x = T.concat(states, axis=1)
        H = x
        # local attention of the last state over all states up to it:
        # alpha[t, j] = v . sigmoid(A1 h_t + A2 h_j), j <= t
        q = self.a1(H).reshape(B, L, 1, d)
        kk = self.a2(H).reshape(B, 1, L, d)
        e = T.sigmoid(q + kk)
        alpha = self.v(e).reshape(B, L, L) * causal_mask(L).astype(x.dtype)
        local = T.matmul(alpha, H)
        c = T.concat([H, local], axis=-1)
        c = T.dropout(c, self.cfg.dropout, s.rng, s.training)
        return self.bilinear(c)

    def _logits(self, hidden):
        return T.matmul(hidden, T.transpose(self.item_emb.weight[: self.n]))


class BERT4Rec(SequentialRecommender):
    architecture = "BERT4Rec"

    def _build(self):
        c, s = self.cfg, self.store
        self.mask_token = self.n + 1
        self.item_emb = Embedding(s, "item_emb", self.n + 2, c.dim)
        self.pos_emb = Embedding(s, "pos_emb", c.max_len, c.dim)
        self.ln_emb = LayerNorm(s, "ln_emb", c.dim)
        self.blocks = []
        for i in range(c.layers):
            self.blocks.append(
                (
                    MultiHeadAttention(s, f"block{i}.attn", c.dim, c.heads, c.dropout),
                    LayerNorm(s, f"block{i}.ln_attn", c.dim),
                    FeedForward(s, f"block{i}.ffn", c.dim, 4 * c.dim, "gelu", c.dropout),
                    LayerNorm(s, f"block{i}.ln_ffn", c.dim),
                )
            )
        self.head = Linear(s, "head.proj", c.dim, c.dim)
        self.ln_head = LayerNorm(s, "head.ln", c.dim)
        self.out_bias = s.add("head.bias", np.zeros(self.n))

    @property
    def window(self):
        # one slot is reserved for the mask token appended at scoring time
        return self.cfg.max_len - 1

    def _prefix_inputs(self, windows):
        rows = [np.append(w, self.mask_token) for w in windows]
        return self.pad_rows(rows), np.array([len(w) for w in windows], dtype=np.int64)

    def _encode(self, seqs):
        s = self.store
        L = seqs.shape[1]
        x = self.ln_emb(self.item_emb(seqs) + self.pos_emb.weight[:L])
        x = T.dropout(x, self.cfg.dropout, s.rng, s.training)
        mask = (seqs != self.pad)[:, None, None, :]
        for attn, ln_a, ffn, ln_f in self.blocks:
            x = ln_a(x + T.dropout(attn(x, None, mask), self.cfg.dropout, s.rng, s.training))
            x = ln_f(x + ffn(x))
        return x

    def _logits(self, hidden):
        h = self.ln_head(T.gelu(self.head(hidden)))
        return T.matmul(h, T.transpose(self.item_emb.weight[: self.n])) + self.out_bias


_CLASSES = {"SASRec": SASRec, "NARM": NARM, "BERT4Rec": BERT4Rec}


def build_model(cfg, seed=0):
    if cfg.architecture not in _CLASSES:
        raise ValueError(f"unknown architecture {cfg.architecture!r}")
    return _CLASSES[cfg.architecture](cfg, seed)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def next_item_windows(seq, max_len):
    """Split a sequence into (input, target) windows covering every transition once."""
    seq = np.asarray(seq, dtype=np.int64)
    out = []
    end = len(seq)
    while end >= 2:
        start = max(0, end - max_len - 1)
        chunk = seq[start:end]
        out.append((chunk[:-1], chunk[1:]))
        end = start + 1
    return out[::-1]


def full_rank_metrics(model, prefixes, targets, ks=(10,)):
    """Rank of each target among all items; returns {f'N@k', f'R@k'} means."""
    scores = model.score_prefixes(prefixes)
    ranks = kernels.ranks_of(scores, np.asarray(targets, dtype=np.int64)[:, None])[:, 0]
    out = {}
    for k in ks:
        hit = ranks <= k
        out[f"N@{k}"] = float(np.mean(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)))
        out[f"R@{k}"] = float(np.mean(hit))
    return out


def _mask_batch(model, windows, rng):
    """BERT4Rec cloze inputs: (inputs, flat positions, targets)."""
    mp = model.cfg.mask_prob
    rows = model.pad_rows(windows)
    valid = rows != model.pad
    masked = (rng.random(rows.shape) < mp) & valid
    lens = valid.sum(1)
    none = ~masked.any(1)
    masked[np.nonzero(none)[0], lens[none] - 1] = True
    targets = rows[masked]
    inputs = rows.copy()
    inputs[masked] = model.mask_token
    b, t = np.nonzero(masked)
    return inputs, (b, t), targets


def _eval_loss(model, examples):
    """Dropout-free next-item loss over all training windows."""
    inputs = model.pad_rows([w[0] for w in examples])
    tg = np.zeros_like(inputs)
    for i, w in enumerate(examples):
        tg[i, : len(w[1])] = w[1]
    weights = (inputs != model.pad).reshape(-1)
    model.store.eval()
    try:
        with T.no_grad():
            logits = model._logits(model._encode(inputs)).reshape(-1, model.n)
            return float(T.cross_entropy(logits, tg.reshape(-1), weights).data)
    finally:
        model.store.train()


def train_victim(model, split, epochs=100, batch_size=64, lr=1e-3, seed=0, eval_every=1, callback=None,
                 track_train_loss=False):
    """Train ``model`` on the training views of ``split``.

    Returns the per-epoch history: loss and full-ranking val N@10/R@10 (rank of
    each user's val item among all items given the training sequence).
    ``track_train_loss`` adds ``train_loss``, the end-of-epoch loss over all
    training windows with dropout off (next-item models only).
    """
    rng = np.random.default_rng(seed)
    model.store.reseed(seed)
    cfg = model.cfg
    if cfg.architecture == "BERT4Rec":
        examples = []
        for s in split.train:
            s = np.asarray(s)
            for end in range(len(s), 0, -cfg.max_len):
                examples.append(s[max(0, end - cfg.max_len):end])
    else:
        examples = [w for s in split.train for w in next_item_windows(s, cfg.max_len)]
    if not examples:
        raise ValueError("no training examples in split")
    opt = Adam(model.store, lr=lr)
    history = []
    val_prefixes = list(split.train)
    for epoch in range(1, epochs + 1):
        model.store.train()
        order = rng.permutation(len(examples))
        total, count = 0.0, 0
        for a in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[a:a + batch_size]]
            if cfg.architecture == "BERT4Rec":
                inputs, (b, t), targets = _mask_batch(model, batch, rng)
                h = model._encode(inputs)
                logits = model._logits(T.getitem(h, (b, t)).reshape(1, len(targets), -1)).reshape(len(targets), -1)
                loss = T.cross_entropy(logits, targets)
                n_terms = len(targets)
            else:
                inputs = model.pad_rows([w[0] for w in batch])
                tg = np.zeros_like(inputs)
                for i, w in enumerate(batch):
                    tg[i, : len(w[1])] = w[1]
                weights = (inputs != model.pad).reshape(-1)
                logits = model._logits(model._encode(inputs))
                loss = T.cross_entropy(logits.reshape(-1, model.n), tg.reshape(-1), weights)
                n_terms = int(weights.sum())
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise T.NaNError(f"victim training diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            total += lv * n_terms
            count += n_terms
        rec = {"epoch": epoch, "loss": total / max(count, 1)}
        if track_train_loss and cfg.architecture != "BERT4Rec":
            rec["train_loss"] = _eval_loss(model, examples)
        if eval_every and (epoch % eval_every == 0 or epoch == epochs):
            m = full_rank_metrics(model, val_prefixes, split.val, ks=(10,))
            rec["val_N@10"], rec["val_R@10"] = m["N@10"], m["R@10"]
        history.append(rec)
        log.debug("victim epoch %d %s", epoch, rec)
        if callback is not None:
            callback(rec)
    model.store.eval()
    return model, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_model(model, path):
    return save_checkpoint(model.store, path, model.architecture, model.cfg.to_dict())


def load_model(path, architecture=None):
    manifest, arrays = load_arrays(path, architecture)
    cfg = ModelConfig.from_dict(manifest["config"])
    if cfg.architecture != manifest["architecture"]:
        raise CheckpointError("corrupt checkpoint: config/architecture tags disagree")
    model = build_model(cfg, manifest.get("seed", 0))
    for name, p in model.store:
        if name not in arrays:
            raise CheckpointError(f"corrupt checkpoint: missing parameter {name}")
        if arrays[name].shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.data.shape}")
    model.store.load_state_dict(arrays)
    model.store.eval()
    return model
