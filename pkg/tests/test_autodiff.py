import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cadem import autodiff as ad
from cadem.autodiff import SparseMatrix, Value

from oracles import gradient_error


def _rand(rng, *shape):
    return rng.uniform(-1, 1, shape)


def _sparse(rng, n, m, density=0.4):
    mask = rng.random((n, m)) < density
    return SparseMatrix.from_dense(np.where(mask, rng.uniform(-1, 1, (n, m)), 0.0))


def _case(name, rng):
    """(builder, input arrays) for one randomly sized instance of an op."""
    m, n, k = rng.integers(2, 5, size=3)
    if name == "matmul":
        return (lambda v: ad.matmul(v[0], v[1])), [_rand(rng, m, k), _rand(rng, k, n)]
    if name == "sparse_dense_matmul":
        s = _sparse(rng, m, k)
        return (lambda v: ad.sparse_dense_matmul(s, v[0])), [_rand(rng, k, n)]
    if name == "add":
        return (lambda v: ad.add(v[0], v[1])), [_rand(rng, m, n), _rand(rng, m, n)]
    if name == "add_row_broadcast":
        return (lambda v: ad.add(v[0], v[1])), [_rand(rng, m, n), _rand(rng, 1, n)]
    if name == "add_col_broadcast":
        return (lambda v: ad.add(v[0], v[1])), [_rand(rng, m, n), _rand(rng, m, 1)]
    if name == "sub":
        return (lambda v: ad.sub(v[0], v[1])), [_rand(rng, m, n), _rand(rng, 1, n)]
    if name == "mul":
        return (lambda v: ad.mul(v[0], v[1])), [_rand(rng, m, n), _rand(rng, m, 1)]
    if name == "scale":
        c = float(rng.uniform(-2, 2))
        return (lambda v: ad.scale(v[0], c)), [_rand(rng, m, n)]
    if name == "relu":
        x = _rand(rng, m, n)
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
        return (lambda v: ad.relu(v[0])), [x]
    if name == "sum_all":
        return (lambda v: ad.sum_all(v[0])), [_rand(rng, m, n)]
    if name == "mean_all":
        return (lambda v: ad.mean_all(v[0])), [_rand(rng, m, n)]
    if name == "frobenius_sq":
        return (lambda v: ad.frobenius_sq(v[0])), [_rand(rng, m, n)]
    if name == "concat_cols":
        return (lambda v: ad.concat_cols([v[0], v[1]])), [_rand(rng, m, n), _rand(rng, m, k)]
    if name == "concat_rows":
        return (lambda v: ad.concat_rows([v[0], v[1]])), [_rand(rng, m, n), _rand(rng, k, n)]
    if name == "column":
        j = int(rng.integers(n))
        return (lambda v: ad.column(v[0], j)), [_rand(rng, m, n)]
    if name == "col_slice":
        lo = int(rng.integers(n - 1))
        return (lambda v: ad.col_slice(v[0], lo, n)), [_rand(rng, m, n)]
    if name == "take_rows":
        idx = rng.integers(m, size=2 * m)
        return (lambda v: ad.take_rows(v[0], idx)), [_rand(rng, m, n)]
    if name == "row_dot":
        return (lambda v: ad.row_dot(v[0], v[1])), [_rand(rng, m, n), _rand(rng, m, n)]
    if name == "row_softmax":
        return (lambda v: ad.row_softmax(v[0])), [_rand(rng, m, n)]
    if name == "dropout":
        seed = int(rng.integers(1 << 30))
        return (lambda v: ad.dropout(v[0], 0.3, np.random.default_rng(seed))), [_rand(rng, m, n)]
    if name == "softmax_cross_entropy":
        y = np.eye(n)[rng.integers(n, size=m)]
        return (lambda v: ad.softmax_cross_entropy(v[0], y)), [_rand(rng, m, n)]
    raise KeyError(name)


OPS = ["matmul", "sparse_dense_matmul", "add", "add_row_broadcast", "add_col_broadcast", "sub",
       "mul", "scale", "relu", "sum_all", "mean_all", "frobenius_sq", "concat_cols", "concat_rows",
       "column", "col_slice", "take_rows", "row_dot", "row_softmax", "dropout",
       "softmax_cross_entropy"]


def worst_gradient_error(n_cases=100, seed=0) -> float:
    """Largest relative error over ``n_cases`` random instances of every op."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in OPS:
        for _ in range(n_cases):
            build, arrays = _case(name, rng)
            worst = max(worst, gradient_error(build, arrays, seed=int(rng.integers(1 << 30))))
    return worst


@pytest.mark.parametrize("name", OPS)
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(OPS.index(name))
    for _ in range(100):
        build, arrays = _case(name, rng)
        assert gradient_error(build, arrays, seed=int(rng.integers(1 << 30))) < 1e-4


def test_identity_matmul():
    m = np.arange(6.0).reshape(3, 2)
    out = ad.matmul(Value(np.eye(3)), Value(m))
    assert np.array_equal(out.data, m)


def test_zero_left_operand_gradient():
    a = ad.parameter(np.zeros((2, 2)))
    b = ad.parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = ad.matmul(a, b)
    assert np.all(out.data == 0)
    g = np.array([[0.5, -1.0], [2.0, 0.25]])
    ad.backward(ad.sum_all(ad.mul(out, Value(g))))
    assert np.allclose(a.grad, g @ b.data.T)


def test_small_matmul_gradient_tight():
    rng = np.random.default_rng(3)
    err = gradient_error(lambda v: ad.matmul(v[0], v[1]), [_rand(rng, 3, 4), _rand(rng, 4, 2)])
    assert err < 1e-5


def test_sparse_identity_and_zero():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(ad.sparse_dense_matmul(SparseMatrix.identity(4), Value(x)).data, x)
    empty = SparseMatrix(4, 4, [], [], [])
    assert np.all(ad.sparse_dense_matmul(empty, Value(x)).data == 0)


def test_sparse_matches_dense_product():
    rng = np.random.default_rng(1)
    s = _sparse(rng, 5, 5)
    x = rng.normal(size=(5, 3))
    assert np.allclose(ad.sparse_dense_matmul(s, Value(x)).data, s.to_dense() @ x, atol=1e-14)


def test_sparse_rejects_duplicates_and_out_of_range():
    with pytest.raises(ValueError):
        SparseMatrix(2, 2, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(IndexError):
        SparseMatrix(2, 2, [0], [2], [1.0])


def test_cross_entropy_cases():
    assert ad.softmax_cross_entropy(Value(np.zeros((1, 4))), np.eye(4)[[1]]).item() == pytest.approx(math.log(4))
    logits = np.zeros((1, 3))
    logits[0, 2] = 50.0
    assert ad.softmax_cross_entropy(Value(logits), np.eye(3)[[2]]).item() < 1e-6
    direct = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    got = ad.softmax_cross_entropy(Value([[1.0, 2.0, 3.0]]), np.eye(3)[[2]]).item()
    assert got == pytest.approx(direct, abs=1e-12)


def test_sum_and_zero_scale_gradients():
    w = ad.parameter(np.ones((3, 2)))
    ad.backward(ad.sum_all(w))
    assert np.array_equal(w.grad, np.ones((3, 2)))
    w.zero_grad()
    ad.backward(ad.sum_all(ad.scale(w, 0.0)))
    assert np.array_equal(w.grad, np.zeros((3, 2)))


def test_two_layer_composite_gradient():
    rng = np.random.default_rng(7)

    def build(v):
        return ad.matmul(ad.relu(ad.matmul(v[0], v[1])), v[2])

    arrays = [_rand(rng, 4, 3), _rand(rng, 3, 5), _rand(rng, 5, 2)]
    assert gradient_error(build, arrays) < 1e-4


def test_shared_value_accumulates_both_consumers():
    x = ad.parameter(np.array([[1.0, -2.0]]))
    loss = ad.add(ad.sum_all(ad.scale(x, 3.0)), ad.sum_all(ad.mul(x, x)))
    ad.backward(loss)
    assert np.allclose(x.grad, 3.0 + 2 * x.data)


def test_backward_deterministic_with_retained_graph():
    rng = np.random.default_rng(11)
    a = ad.parameter(_rand(rng, 4, 3))
    b = ad.parameter(_rand(rng, 3, 2))
    loss = ad.frobenius_sq(ad.row_softmax(ad.matmul(a, b)))
    ad.backward(loss, retain_graph=True)
    first = a.grad.copy(), b.grad.copy()
    a.zero_grad()
    b.zero_grad()
    ad.backward(loss)
    assert np.array_equal(first[0], a.grad) and np.array_equal(first[1], b.grad)


def test_backward_needs_scalar():
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.parameter(np.ones((2, 1))))


def test_dropout_eval_is_identity():
    x = Value(np.ones((3, 3)))
    assert ad.dropout(x, 0.5, np.random.default_rng(0), train=False) is x


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_grad_shape_matches_data(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(_rand(rng, 3, 4))
    b = ad.parameter(_rand(rng, 4, 2))
    h = ad.relu(ad.matmul(a, b))
    ad.backward(ad.mean_all(ad.row_softmax(h)))
    assert a.grad.shape == a.data.shape and b.grad.shape == b.data.shape


# --- Adam ---------------------------------------------------------------

def test_adam_zero_grad_leaves_params():
    p = ad.parameter(np.array([[1.0, -1.0]]))
    opt = ad.Adam([{"params": [p], "lr": 0.1, "weight_decay": 0.0}])
    opt.step()
    assert np.array_equal(p.data, [[1.0, -1.0]])


def test_adam_first_step_closed_form():
    g = np.array([[0.3, -2.0, 1e-3]])
    p = ad.parameter(np.zeros((1, 3)))
    p.grad = g.copy()
    lr, eps = 0.01, 1e-8
    opt = ad.Adam([{"params": [p], "lr": lr}], eps=eps)
    opt.step()
    # bias-corrected moments equal g and g^2 after one step
    assert np.allclose(p.data, -lr * g / (np.abs(g) + eps), rtol=1e-12)


def test_adam_group_learning_rates():
    a = ad.parameter(np.zeros((1, 2)))
    b = ad.parameter(np.zeros((1, 2)))
    a.grad = np.array([[0.5, -0.5]])
    b.grad = a.grad.copy()
    opt = ad.Adam([{"params": [a], "lr": 1e-2}, {"params": [b], "lr": 1e-4}])
    opt.step()
    assert np.allclose(a.data / b.data, 100.0)


def test_adam_rejects_nan_gradient():
    p = ad.parameter(np.zeros((1, 1)))
    p.grad = np.array([[np.nan]])
    with pytest.raises(FloatingPointError):
        ad.Adam([{"params": [p], "lr": 0.1}]).step()
