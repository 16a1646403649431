import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from postrank import numerics as nx
from postrank.numerics import DimensionError, GradTape, Tensor, TapeError, grad_check


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_selector():
    x = nx.constant([[1, 2], [3, 4]])
    assert np.array_equal(nx.matmul(nx.constant(np.eye(2)), x).data, [[1, 2], [3, 4]])
    assert np.array_equal(nx.matmul(nx.constant([[1, 0]]), nx.constant([[2], [3]])).data, [[2]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(nx.matmul(nx.constant(a), nx.constant(b)).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(nx.constant(np.zeros((2, 3))), nx.constant(np.zeros((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax_rows(nx.constant([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(nx.softmax_rows(nx.constant([[1000.0, 1000.0, 1000.0]])).data, [[1 / 3] * 3])
    np.testing.assert_allclose(nx.softmax_rows(nx.constant([[0.0, math.log(3)]])).data, [[0.25, 0.75]])


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        nx.softmax_rows(nx.constant([[0.0, np.inf]]))


def test_masked_softmax_zeroes_excluded_entries():
    y = nx.softmax_rows(nx.constant(np.zeros((3, 3))), mask=~np.eye(3, dtype=bool)).data
    np.testing.assert_allclose(np.diag(y), 0.0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0)


def test_simple_elementwise_ops():
    assert nx.tanh(nx.constant([0.0])).item() == 0.0
    assert np.array_equal(nx.concat([nx.constant([1, 2]), nx.constant([3])], axis=0).data, [1, 2, 3])
    x = np.array([[1.0, 2.0], [3.0, 5.0], [-1.0, 4.0]])
    col_sums = [x[0, j] + x[1, j] + x[2, j] for j in range(2)]
    np.testing.assert_allclose(nx.mean_rows(nx.constant(x)).data, np.array(col_sums) / 3)
    np.testing.assert_allclose(nx.sum_rows(nx.constant(x)).data, col_sums)
    np.testing.assert_allclose(nx.sigmoid(nx.constant([0.0, -800.0, 800.0])).data, [0.5, 0.0, 1.0])


def test_shape_errors():
    with pytest.raises(DimensionError):
        nx.add(nx.constant(np.zeros((2, 3))), nx.constant(np.zeros((3, 2))))
    with pytest.raises(DimensionError):
        nx.concat([nx.constant(np.zeros((2, 3))), nx.constant(np.zeros((2, 2)))], axis=0)


def test_grad_check_linear_is_exact():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
    assert grad_check(nx.sum_all, x) < 1e-10


def test_grad_check_tanh_example():
    assert grad_check(lambda t: nx.sum_all(nx.tanh(t)), Tensor([0.3, -0.7])) < 1e-6


def test_grad_check_requires_scalar():
    with pytest.raises(DimensionError):
        grad_check(lambda t: nx.tanh(t), Tensor([0.3, -0.7]))


def _weighted(out_shape, seed):
    w = nx.constant(np.random.default_rng(seed).normal(size=out_shape))
    return lambda y: nx.sum_all(nx.mul(y, w))


OPS = {
    "matmul_left": (lambda x, o: nx.matmul(x, o), (3, 4), (4, 2)),
    "matmul_right": (lambda x, o: nx.matmul(o, x), (4, 2), (3, 4)),
    "batched_matmul": (lambda x, o: nx.matmul(x, o), (2, 3, 4), (4, 2)),
    "add_broadcast": (lambda x, o: nx.add(o, x), (4,), (3, 4)),
    "sub": (lambda x, o: nx.sub(o, x), (3, 4), (3, 4)),
    "mul": (lambda x, o: nx.mul(x, o), (3, 4), (3, 4)),
    "scale": (lambda x, o: nx.scale(x, -2.5), (3, 4), (1,)),
    "tanh": (lambda x, o: nx.tanh(x), (3, 4), (1,)),
    "sigmoid": (lambda x, o: nx.sigmoid(x), (3, 4), (1,)),
    "softmax": (lambda x, o: nx.softmax_rows(x), (3, 4), (1,)),
    "masked_softmax": (lambda x, o: nx.softmax_rows(x, mask=~np.eye(4, dtype=bool)), (4, 4), (1,)),
    "concat": (lambda x, o: nx.concat([x, o], axis=-1), (3, 2), (3, 4)),
    "sum_rows": (lambda x, o: nx.sum_rows(x), (3, 4), (1,)),
    "mean_rows": (lambda x, o: nx.mean_rows(x), (3, 4), (1,)),
    "transpose": (lambda x, o: nx.transpose(x), (3, 4), (1,)),
    "reshape": (lambda x, o: nx.reshape(x, (2, 6)), (3, 4), (1,)),
    "take": (lambda x, o: nx.take(x, [[0, 2], [2, 2]], axis=0), (3, 4), (1,)),
    "take_axis1": (lambda x, o: nx.take(x, [1, 0, 1], axis=-2), (2, 3, 4), (1,)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_passes_grad_check(name):
    op, shape, other_shape = OPS[name]
    rng = np.random.default_rng(sum(map(ord, name)))
    other = nx.constant(rng.normal(size=other_shape))
    out_shape = op(nx.constant(rng.normal(size=shape)), other).shape
    reduce = _weighted(out_shape, 1)
    assert grad_check(lambda t: reduce(op(t, other)), Tensor(rng.normal(size=shape))) < 1e-6


def test_relu_grad_away_from_kink():
    x = Tensor([-1.0, 0.5, 2.0])
    assert grad_check(lambda t: nx.sum_all(nx.relu(t)), x) < 1e-10


def test_pair_mlp_matches_composition_and_gradients():
    rng = np.random.default_rng(5)
    src, dst = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 3))
    b, w = rng.normal(size=3), rng.normal(size=(3, 1))

    def composed(s, d, bb, ww):
        h = nx.add(nx.reshape(s, (2, 4, 1, 3)), nx.reshape(d, (2, 1, 4, 3)))
        return nx.reshape(nx.matmul(nx.tanh(nx.add(h, bb)), ww), (2, 4, 4))

    args = [nx.constant(a) for a in (src, dst, b, w)]
    np.testing.assert_allclose(nx.pair_mlp(*args).data, composed(*args).data, atol=1e-14)
    reduce = _weighted((2, 4, 4), 2)
    for i, base in enumerate((src, dst, b, w)):
        def f(t, i=i):
            a = list(args)
            a[i] = t
            return reduce(nx.pair_mlp(*a))

        assert grad_check(f, Tensor(base)) < 1e-6


def test_tape_runs_in_reverse_and_only_once():
    x = nx.parameter([1.0, 2.0])
    with GradTape() as tape:
        y = nx.tanh(nx.scale(x, 2.0))
        loss = nx.sum_all(y)
    assert [op.name for op in tape.ops] == ["scale", "tanh", "sum"]
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * (1 - np.tanh(2 * x.data) ** 2))
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_no_tape_means_no_recording():
    x = nx.parameter([1.0])
    y = nx.tanh(x)
    assert not y.requires_grad


def test_gradients_accumulate_over_shared_inputs():
    x = nx.parameter([3.0])
    with GradTape() as tape:
        loss = nx.sum_all(nx.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0])


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-50, 50))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    y = nx.softmax_rows(nx.constant(x)).data
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(y >= 0)
    y2 = nx.softmax_rows(nx.constant(x + c)).data
    np.testing.assert_allclose(y, y2, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4, 2), elements=finite))
def test_matmul_associative(a, b, c):
    A, B, C = map(nx.constant, (a, b, c))
    np.testing.assert_allclose(nx.matmul(nx.matmul(A, B), C).data, nx.matmul(A, nx.matmul(B, C)).data, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite))
def test_ops_keep_values_finite(x):
    t = nx.constant(x * 100)
    for y in (nx.tanh(t), nx.sigmoid(t), nx.softmax_rows(t)):
        assert np.all(np.isfinite(y.data))


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(11)
        a = nx.parameter(rng.normal(size=(4, 5)))
        b = nx.constant(rng.normal(size=(5, 3)))
        with GradTape() as tape:
            loss = nx.sum_all(nx.softmax_rows(nx.tanh(nx.matmul(a, b))))
        tape.backward(loss)
        return loss.data.tobytes(), a.grad.tobytes()

    assert run() == run()
