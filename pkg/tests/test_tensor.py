import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqextract.nn import ParameterStore, finite_difference_check
from seqextract.nn import tensor as T


def _store_with(**arrays):
    s = ParameterStore(0)
    for name, a in arrays.items():
        s.add(name, a)
    return s


def test_softmax_of_equal_logits_is_uniform():
    out = T.softmax(T.Tensor(np.zeros(4, dtype=np.float32)))
    assert np.allclose(out.data, 0.25)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(xs):
    out = T.softmax(T.Tensor(np.array(xs, dtype=np.float32)))
    assert abs(out.data.sum() - 1.0) < 1e-6


def test_masked_softmax_ignores_masked_keys():
    x = T.Tensor(np.array([[1.0, 50.0, 2.0]], dtype=np.float32))
    out = T.softmax(x, mask=np.array([[True, False, True]]))
    assert out.data[0, 1] == 0.0
    assert np.isclose(out.data.sum(), 1.0)


def test_dropout_eval_mode_is_identity():
    x = T.Tensor(np.arange(6, dtype=np.float32))
    out = T.dropout(x, 0.5, np.random.default_rng(0), training=False)
    assert np.array_equal(out.data, x.data)


def test_dropout_train_mode_is_inverted_scaled():
    x = T.Tensor(np.ones(10000, dtype=np.float32))
    out = T.dropout(x, 0.25, np.random.default_rng(0), training=True)
    kept = out.data[out.data != 0]
    assert np.allclose(kept, 1 / 0.75)
    assert abs(len(kept) / 10000 - 0.75) < 0.02


def test_sum_gradient_is_all_ones():
    s = _store_with(w=np.random.default_rng(0).normal(size=(3, 4)))
    T.tsum(s["w"]).backward()
    assert np.array_equal(s["w"].grad, np.ones((3, 4), dtype=np.float32))


def test_constant_loss_gives_zero_gradients():
    s = _store_with(w=np.ones(3))
    loss = T.tsum(s["w"]) * 0.0
    loss.backward()
    assert np.array_equal(s.grads()["w"], np.zeros(3))


def test_backward_needs_scalar():
    s = _store_with(w=np.ones(3))
    with pytest.raises(ValueError):
        (s["w"] * 2.0).backward()


def test_shape_mismatch_raises():
    with pytest.raises(T.ShapeError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 2))))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_fails_fast_with_operation_name():
    with pytest.raises(T.NaNError, match="log"):
        T.log(T.Tensor(np.array([-1.0], dtype=np.float32)))


def test_binary_cross_entropy_single_sample():
    loss = T.binary_cross_entropy(T.Tensor(np.array([0.5])), np.array([1]))
    assert np.isclose(float(loss.data), np.log(2.0), atol=1e-6)


def test_binary_cross_entropy_rejects_non_binary_labels():
    with pytest.raises(ValueError):
        T.binary_cross_entropy(T.Tensor(np.array([0.5])), np.array([2]))


def test_hinge_is_non_negative():
    out = T.hinge(T.Tensor(np.array([-2.0, 0.0, 3.0])))
    assert np.array_equal(out.data, [0.0, 0.0, 3.0])


def test_quadratic_gradcheck_is_exact():
    s = _store_with(w=np.random.default_rng(1).normal(size=(4, 3)))
    rep = finite_difference_check(lambda: T.tsum(s["w"] * s["w"]), s, tolerance=1e-6)
    assert rep.passed, str(rep)


def test_corrupted_gradient_is_reported_by_name():
    s = _store_with(a=np.ones(3), b=np.ones(2))
    closure = lambda: T.tsum(s["a"] * s["a"]) + T.tsum(s["b"])  # noqa: E731
    bad = {"a": np.array([2.0, 2.0, 5.0]), "b": np.ones(2)}
    rep = finite_difference_check(closure, s, analytic=bad)
    assert not rep.passed
    assert rep.failing == ["a"]


def test_nondeterministic_closure_detected():
    from seqextract.nn import NonDeterministicClosure

    s = _store_with(w=np.ones(2))
    calls = iter(range(100))
    with pytest.raises(NonDeterministicClosure):
        finite_difference_check(lambda: T.tsum(s["w"]) * float(next(calls)), s)


OPS = {
    "exp": lambda x: T.exp(x * 0.3),
    "log": lambda x: T.log(T.exp(x) + 1.0),
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "gelu": T.gelu,
    "softmax": lambda x: T.softmax(x, axis=-1) * np.arange(1, 5),
    "log_softmax": lambda x: T.log_softmax(x, axis=-1) * np.arange(1, 5),
    "power": lambda x: T.power(T.exp(x * 0.1), 3.0),
    "div": lambda x: x / (T.exp(x) + 2.0),
    "transpose": lambda x: T.transpose(x) * np.arange(3)[None, :],
    "getitem": lambda x: x[1:, ::2] * 3.0,
    "concat": lambda x: T.concat([x, x * 2.0], axis=0) * np.arange(6)[:, None],
    "take_along": lambda x: T.take_along(x, np.array([[0, 3], [1, 1], [2, 0]]), axis=1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_elementwise_and_shape_ops_gradcheck(name):
    s = _store_with(x=np.random.default_rng(2).normal(size=(3, 4)))
    op = OPS[name]
    rep = finite_difference_check(lambda: T.tsum(op(s["x"]) * np.linspace(0.5, 1.5, 1)), s)
    assert rep.passed, str(rep)


def test_cross_entropy_and_layer_norm_gradcheck():
    r = np.random.default_rng(3)
    s = _store_with(x=r.normal(size=(5, 6)), g=r.normal(size=6), b=r.normal(size=6))
    targets = np.array([0, 5, 2, 2, 1])
    w = np.array([1, 1, 0, 1, 1], dtype=bool)

    def closure():
        h = T.layer_norm(s["x"], s["g"], s["b"])
        return T.cross_entropy(h, targets, w)

    rep = finite_difference_check(closure, s)
    assert rep.passed, str(rep)


def test_embedding_rejects_out_of_range_ids():
    s = _store_with(e=np.ones((3, 2)))
    with pytest.raises(IndexError):
        T.embedding(s["e"], np.array([3]))


def test_no_grad_builds_no_graph():
    s = _store_with(w=np.ones(2))
    with T.no_grad():
        out = T.tsum(s["w"] * 2.0)
    assert not out.requires_grad
