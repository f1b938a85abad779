import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqextract import data, models
from seqextract.nn import CheckpointError, finite_difference_check
from seqextract.nn import tensor as T

TINY = {
    "SASRec": dict(dim=8, layers=1, heads=2, max_len=4),
    "NARM": dict(dim=6, max_len=4),
    "BERT4Rec": dict(dim=6, layers=1, heads=2, max_len=4, mask_prob=0.2),
}


def tiny(arch, n=7, seed=0, dropout=0.0):
    return models.build_model(models.ModelConfig(arch, n_items=n, dropout=dropout, **TINY[arch]), seed)


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_gradcheck_each_architecture(arch):
    m = tiny(arch, dropout=0.2)
    assert m.num_parameters() <= 1000
    seqs = np.array([[0, 3, 5, 1], [6, 2, 2, 4]])
    weights = np.random.default_rng(1).normal(size=(2, 4, 7))

    def closure():
        return T.tsum(m.sequence_logits(seqs) * weights)

    rep = finite_difference_check(closure, m.store)
    assert rep.passed, str(rep)


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_same_seed_same_bytes(arch):
    a, b = tiny(arch, seed=3), tiny(arch, seed=3)
    for (n, p), (_, q) in zip(a.store, b.store):
        assert p.data.tobytes() == q.data.tobytes(), n


def test_heads_split_dim():
    m = models.build_model(models.ModelConfig("SASRec", n_items=10, dim=64, heads=2), 0)
    assert m.blocks[0][1].dh == 32


def test_narm_single_gru_layer_accepted():
    cfg = models.ModelConfig("NARM", n_items=3416, dim=64, gru_layers=1, dropout=0.1)
    assert cfg.validate() is cfg


@pytest.mark.parametrize(
    "cfg",
    [
        models.ModelConfig("GRU4Rec", n_items=5),
        models.ModelConfig("SASRec", n_items=5, mask_prob=0.2),
        models.ModelConfig("BERT4Rec", n_items=5),
        models.ModelConfig("SASRec", n_items=5, dropout=1.0),
        models.ModelConfig("SASRec", n_items=5, dim=10, heads=3),
    ],
)
def test_invalid_configs(cfg):
    with pytest.raises(ValueError):
        models.build_model(cfg)


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_score_next_contract(arch):
    m = tiny(arch)
    a = m.score_next([1, 2, 3])
    assert a.shape == (7,) and np.isfinite(a).all()
    assert np.array_equal(a, m.score_next([1, 2, 3]))
    long = [0, 6, 5, 4, 1, 2, 3]
    assert np.array_equal(m.score_next(long), m.score_next(long[-m.window:]))
    with pytest.raises(ValueError):
        m.score_next([])
    with pytest.raises(ValueError):
        m.score_next([7])


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_batch_invariance(arch):
    m = tiny(arch)
    rng = np.random.default_rng(0)
    prefixes = [rng.integers(0, 7, size=rng.integers(1, 6)) for _ in range(9)]
    together = m.score_prefixes(prefixes)
    for p, row in zip(prefixes, together):
        assert np.array_equal(row, m.score_next(p))


@pytest.mark.parametrize("arch", ["SASRec", "NARM"])
@settings(max_examples=25)
@given(seq=st.lists(st.integers(0, 6), min_size=1, max_size=3), extra=st.integers(0, 6))
def test_causality(arch, seq, extra):
    m = tiny(arch)
    base = m.sequence_logits(np.array([seq])).data[0]
    longer = m.sequence_logits(np.array([seq + [extra]])).data[0]
    assert np.array_equal(base, longer[: len(seq)])
    for j in range(1, len(seq) + 1):
        assert np.array_equal(base[j - 1], m.score_next(seq[:j]))


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def test_sasrec_matches_manual_forward():
    m = models.build_model(models.ModelConfig("SASRec", n_items=5, dim=2, layers=1, heads=1, dropout=0.0, max_len=3), 0)
    rng = np.random.default_rng(11)
    for _, p in m.store:
        p.data[...] = rng.normal(size=p.data.shape)
    P = {n: p.data.astype(np.float64) for n, p in m.store}
    prefix = [4, 1]

    x = P["item_emb.weight"][prefix] + P["pos_emb.weight"][:2]
    q = _layer_norm(x, P["block0.ln_attn.gamma"], P["block0.ln_attn.beta"])
    Q = q @ P["block0.attn.q.weight"] + P["block0.attn.q.bias"]
    K = x @ P["block0.attn.k.weight"] + P["block0.attn.k.bias"]
    V = x @ P["block0.attn.v.weight"] + P["block0.attn.v.bias"]
    s = Q @ K.T / np.sqrt(2.0)
    s[0, 1] = -np.inf
    att = _softmax(s) @ V @ P["block0.attn.o.weight"] + P["block0.attn.o.bias"]
    h = _layer_norm(q + att, P["block0.ln_ffn.gamma"], P["block0.ln_ffn.beta"])
    f = np.maximum(h @ P["block0.ffn.fc1.weight"] + P["block0.ffn.fc1.bias"], 0)
    h = h + f @ P["block0.ffn.fc2.weight"] + P["block0.ffn.fc2.bias"]
    out = _layer_norm(h, P["ln_out.gamma"], P["ln_out.beta"])[-1]
    expect = P["item_emb.weight"][:5] @ out
    assert np.allclose(m.score_next(prefix), expect, atol=1e-4)


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_checkpoint_roundtrip_scores(tmp_path, arch):
    m = tiny(arch, seed=5)
    models.save_model(m, tmp_path / "ck")
    back = models.load_model(tmp_path / "ck", arch)
    rng = np.random.default_rng(0)
    prefixes = [rng.integers(0, 7, size=rng.integers(1, 5)) for _ in range(100)]
    assert np.array_equal(m.score_prefixes(prefixes), back.score_prefixes(prefixes))


def test_cross_architecture_load(tmp_path):
    models.save_model(tiny("SASRec"), tmp_path / "ck")
    with pytest.raises(CheckpointError, match="SASRec") as e:
        models.load_model(tmp_path / "ck", "NARM")
    assert "NARM" in str(e.value)


def test_truncated_model_checkpoint(tmp_path):
    models.save_model(tiny("NARM"), tmp_path / "ck")
    f = tmp_path / "ck" / "params.bin"
    f.write_bytes(f.read_bytes()[:10])
    with pytest.raises(CheckpointError, match="corrupt checkpoint"):
        models.load_model(tmp_path / "ck")


def _toy_split(users=20, items=30, seed=0):
    rows = data.markov_interactions(n_users=users, n_items=items, seed=seed, min_len=12, max_len=20, n_next=2)
    return data.split_leave_last_two(data.from_interactions(rows))


def test_epochs_zero_leaves_model_unchanged():
    split = _toy_split()
    m = models.build_model(models.ModelConfig("SASRec", n_items=split.n_items, dim=8, max_len=8), 0)
    before = m.store.state_dict()
    models.train_victim(m, split, epochs=0)
    for n, p in m.store:
        assert p.data.tobytes() == before[n].tobytes()


@pytest.mark.parametrize("arch", models.ARCHITECTURES)
def test_training_is_deterministic(arch):
    split = _toy_split(users=10)
    kw = dict(dim=8, max_len=8, mask_prob=0.2 if arch == "BERT4Rec" else None)

    def run():
        m = models.build_model(models.ModelConfig(arch, n_items=split.n_items, **kw), 1)
        return models.train_victim(m, split, epochs=2, seed=4)[1][-1]["loss"]

    assert run() == run()


@pytest.mark.slow
def test_toy_victim_beats_random_baseline():
    split = _toy_split()
    m = models.build_model(models.ModelConfig("SASRec", n_items=split.n_items, dim=16, max_len=10), 0)
    _, hist = models.train_victim(m, split, epochs=100, seed=0, eval_every=100, track_train_loss=True)
    assert hist[-1]["val_R@10"] > 10 / split.n_items
    losses = np.array([h["train_loss"] for h in hist])
    smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) < 0)
