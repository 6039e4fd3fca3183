import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psnet import tensor as T
from psnet.gradcheck import grad_check
from psnet.losses import (
    LAMBDA_BY_DATASET,
    attention_sum,
    attention_vector,
    euclidean_loss,
    total_loss,
    variance_loss,
)
from psnet.tensor import ShapeError, Tensor

from oracles import cosine_loss_loops, pixel_means


def vec(values):
    return Tensor(np.asarray(values, dtype=np.float64))


def test_attention_vector_flattens():
    out = attention_vector(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
    assert out.data.tolist() == [1.0, 2.0, 3.0, 4.0]
    const = attention_vector(Tensor(np.full((3, 2, 2), 0.7)))
    np.testing.assert_allclose(const.data, 0.7)


def test_attention_vector_oracle():
    x = np.random.default_rng(2).random((4, 3, 3))
    np.testing.assert_allclose(attention_vector(Tensor(x, dtype=np.float64)).data, pixel_means(x).ravel(), atol=1e-7)


def test_attention_sum():
    v = vec([1.0, 2.0, 0.5])
    assert attention_sum([v, v, v]).data.tolist() == [3.0, 6.0, 1.5]
    g = np.random.default_rng(0).random((4, 6))
    out = attention_sum([vec(r) for r in g]).data
    assert np.array_equal(out, ((g[0] + g[1]) + g[2]) + g[3])
    assert np.all(out >= g.max(axis=0))
    with pytest.raises(ShapeError):
        attention_sum([vec([1.0]), vec([1.0, 2.0])])


def test_identical_branches_give_one():
    v = vec([0.2, 1.0, 3.0])
    assert variance_loss([[[v, v, v, v]]]).item() == pytest.approx(1.0, abs=1e-6)


def test_orthogonal_pair_gives_zero():
    assert variance_loss([[[vec([1.0, 0.0]), vec([0.0, 1.0])]]]).item() == pytest.approx(0.0, abs=1e-6)


def test_all_zero_vectors_give_exact_zero():
    z = vec([0.0, 0.0, 0.0])
    assert variance_loss([[[z, z, z, z], [z, z, z, z]]]).item() == 0.0


def test_variance_loss_matches_loops():
    g = np.random.default_rng(11)
    groups = [[g.random(9) for _ in range(4)] for _ in range(6)]
    records = [[[vec(v) for v in grp] for grp in groups[i : i + 3]] for i in (0, 3)]
    expected = cosine_loss_loops([[list(v) for v in grp] for grp in groups])
    assert variance_loss(records).item() == pytest.approx(expected, rel=1e-12)


def test_variance_loss_accepts_branch_maps():
    g = np.random.default_rng(4)
    maps = [Tensor(g.random((3, 2, 2)), dtype=np.float64) for _ in range(4)]
    vecs = [attention_vector(m) for m in maps]
    assert variance_loss([[maps]]).item() == pytest.approx(variance_loss([[vecs]]).item(), rel=1e-14)


@given(st.integers(0, 2**31), st.integers(2, 5), st.integers(1, 12))
@settings(max_examples=60, deadline=None)
def test_range_and_permutation(seed, s, m):
    g = np.random.default_rng(seed)
    raw = g.random((s, m)) * (g.random((s, m)) > 0.3)
    base = variance_loss([[[vec(r) for r in raw]]]).item()
    assert 0.0 <= base <= 1.0 + 1e-12
    perm = variance_loss([[[vec(r) for r in raw[g.permutation(s)]]]]).item()
    assert perm == pytest.approx(base, abs=1e-12)


@given(st.integers(0, 2**31), st.floats(0.01, 100.0))
@settings(max_examples=40, deadline=None)
def test_group_scale_invariance(seed, c):
    g = np.random.default_rng(seed)
    raw = g.uniform(0.1, 1.0, size=(4, 10))
    a = variance_loss([[[vec(r) for r in raw]]]).item()
    b = variance_loss([[[vec(c * r) for r in raw]]]).item()
    assert b == pytest.approx(a, rel=1e-9)


@given(st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_duplicating_a_branch_raises_loss(seed):
    # branches attending to disjoint pixels; for overlapping positive vectors
    # a copy can lower the loss (e.g. uniform draws with seed 108)
    g = np.random.default_rng(seed)
    owner = g.permutation(np.arange(16) % 4)
    raw = np.where(owner[None, :] == np.arange(4)[:, None], g.uniform(0.1, 1.0, (4, 16)), 0.0)
    before = variance_loss([[[vec(r) for r in raw]]]).item()
    dup = raw.copy()
    dup[1] = dup[0]
    after = variance_loss([[[vec(r) for r in dup]]]).item()
    assert after > before


def test_euclidean_loss_cases():
    gt = np.zeros((1, 2, 2))
    assert euclidean_loss(Tensor(gt), gt).item() == 0.0
    pred = np.array([[[3.0, 0.0], [0.0, 4.0]]])
    assert euclidean_loss(Tensor(pred), gt).item() == pytest.approx(25.0)
    preds = [Tensor(pred), Tensor(pred)]
    assert euclidean_loss(preds, [gt, gt]).item() == pytest.approx(25.0)
    with pytest.raises(ShapeError):
        euclidean_loss(Tensor(pred), np.zeros((1, 2, 3)))


def test_total_loss():
    le, lm = Tensor(2.0), Tensor(0.5)
    assert total_loss(le, lm, 0.0).item() == 2.0
    assert total_loss(le, lm, 1.0).item() == 2.5
    assert LAMBDA_BY_DATASET["ucf_qnrf"] == 1.5
    assert LAMBDA_BY_DATASET["shanghaitech_a"] == 1.0


def test_gradients():
    g = np.random.default_rng(8)
    s = 4
    maps = [g.uniform(0.05, 1.0, size=(2, 3, 3)) for _ in range(s)]
    err = grad_check(lambda *xs: variance_loss([[list(xs)]]), maps)
    assert err < 1e-4
    pred, gt = g.normal(size=(1, 4, 4)), g.normal(size=(1, 4, 4))
    err = grad_check(lambda p, q: euclidean_loss(p, q), [pred, gt])
    assert err < 1e-4


def test_zero_vectors_have_finite_gradients():
    xs = [Tensor(np.zeros(3), requires_grad=True, dtype=np.float64) for _ in range(4)]
    T.backward(variance_loss([[xs]]))
    assert all(np.all(np.isfinite(x.grad)) for x in xs)
