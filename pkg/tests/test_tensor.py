"""Tensor primitives: softmax contracts, backward vs finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rehearsal_memory.autodiff import (
    ParameterStore,
    Rng,
    Tensor,
    check_gradients,
    concat,
    log_softmax,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    swapaxes,
    take0,
    take_last,
    tanh,
)
from rehearsal_memory.errors import NumericError, ShapeError

from .conftest import assert_close, store64


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        out = softmax(Tensor(np.zeros(3))).data
        assert_close(out, np.full(3, 1.0 / 3.0))

    def test_known_values(self):
        # Frozen from a 64-bit scalar evaluation of exp(x)/sum(exp(x)).
        out = softmax(Tensor(np.array([1.0, 2.0, 3.0]))).data
        assert_close(out, [0.09003057317038046, 0.24472847105479767, 0.6652409557748219])

    @given(
        xs=st.lists(st.floats(-30, 30), min_size=1, max_size=8),
        shift=st.floats(-50, 50),
    )
    @settings(max_examples=200, deadline=None)
    def test_simplex_and_shift_invariance(self, xs, shift):
        x = np.asarray(xs, dtype=np.float64)
        p = softmax(Tensor(x)).data
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) < 1e-6
        q = softmax(Tensor(x + shift)).data
        assert_close(p, q, atol=1e-9, msg="shift invariance")

    def test_large_inputs_stable(self):
        p = softmax(Tensor(np.array([1000.0, 1000.0, 999.0]))).data
        assert np.isfinite(p).all() and abs(p.sum() - 1.0) < 1e-6

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NumericError):
            softmax(Tensor(np.array([1.0, np.nan])))
        with pytest.raises(NumericError):
            log_softmax(Tensor(np.array([np.inf, 0.0])))


class TestBackward:
    def test_product_rule(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = Tensor(np.array([7.0]), requires_grad=True)
        (x * y).backward()
        assert_close(x.grad, [7.0])
        assert_close(y.grad, [3.0])

    def test_nonparticipating_parameter_gets_zero(self):
        store = store64()
        x = store.add("x", np.array([2.0]))
        unused = store.add("unused", np.array([5.0]))
        (x * x).backward()
        grads = store.gradients()
        assert_close(grads["x"], [4.0])
        assert_close(grads["unused"], [0.0])
        assert unused.grad is None

    def test_nonscalar_loss_rejected(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            t.backward()

    def test_grad_accumulates_across_paths(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x + x  # dy/dx = 2x + 1 = 5
        y.backward()
        assert_close(x.grad, [5.0])

    def test_sibling_grads_do_not_alias(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        c = a + b
        d = a + c  # a participates twice
        reduce_sum(d).backward()
        assert_close(a.grad, [2.0, 2.0])
        assert_close(b.grad, [1.0, 1.0])


def _gradcheck_single(op, shapes, rng, n_coords=20, dtype=np.float64):
    store = ParameterStore(dtype=dtype)
    args = [store.add(f"p{i}", rng.normal(shape)) for i, shape in enumerate(shapes)]

    def forward():
        return reduce_mean(op(*args) * op(*args))

    eps = 1e-6 if dtype == np.float64 else 3e-3
    worst, _ = check_gradients(forward, store, rng.child("pick"), n_coords, epsilon=eps)
    return worst


OPS = [
    ("add", lambda a, b: a + b, [(3, 4), (3, 4)]),
    ("add_broadcast", lambda a, b: a + b, [(3, 4), (4,)]),
    ("sub", lambda a, b: a - b, [(2, 3), (2, 3)]),
    ("mul", lambda a, b: a * b, [(3, 3), (3, 3)]),
    ("div", lambda a, b: a / (b * b + 1.0), [(2, 2), (2, 2)]),
    ("matmul", matmul, [(3, 4), (4, 2)]),
    ("matmul_batched", matmul, [(2, 3, 4), (2, 4, 2)]),
    ("matmul_broadcast", matmul, [(2, 2, 3, 4), (1, 1, 4, 2)]),
    ("tanh", tanh, [(3, 3)]),
    ("sigmoid", sigmoid, [(3, 3)]),
    ("relu", relu, [(4, 4)]),
    ("softmax", lambda a: softmax(a, axis=-1), [(3, 5)]),
    ("log_softmax", lambda a: log_softmax(a, axis=-1), [(3, 5)]),
    ("sum_axis", lambda a: reduce_sum(a, axis=1, keepdims=True), [(3, 4)]),
    ("mean", lambda a: reduce_mean(a, axis=0), [(3, 4)]),
    ("reshape", lambda a: reshape(a, (2, 6)), [(3, 4)]),
    ("swapaxes", lambda a: swapaxes(a, 0, 1), [(3, 4)]),
    ("concat", lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 2)]),
    ("getitem", lambda a: a[1:, :2], [(3, 4)]),
    ("take0", lambda a: take0(a, np.array([0, 2, 2, 1])), [(3, 4)]),
    ("take_last", lambda a: take_last(a, np.array([1, 0, 3])) + Tensor(np.zeros(3)), [(3, 4)]),
]


@pytest.mark.parametrize("name,op,shapes", OPS, ids=[o[0] for o in OPS])
def test_gradcheck_64bit(name, op, shapes):
    worst = _gradcheck_single(op, shapes, Rng(hash(name) % 2**32), dtype=np.float64)
    assert worst < 1e-5, f"{name}: rel err {worst}"


@pytest.mark.parametrize("name,op,shapes", OPS[:12], ids=[o[0] for o in OPS[:12]])
def test_gradcheck_32bit(name, op, shapes):
    worst = _gradcheck_single(op, shapes, Rng(hash(name) % 2**31), dtype=np.float32)
    assert worst < 1e-3, f"{name}: rel err {worst}"


def test_take0_rejects_out_of_range():
    t = Tensor(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        take0(t, np.array([3]))


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def test_dtype_follows_leaves():
    a32 = Tensor(np.zeros((2, 2), dtype=np.float32))
    assert (a32 * 2.0).dtype == np.float32
    a64 = Tensor(np.zeros((2, 2), dtype=np.float64))
    assert (a64 * 2.0).dtype == np.float64


def test_log_softmax_matches_log_of_softmax():
    x = Tensor(np.array([[0.5, -1.0, 2.0]]))
    assert_close(log_softmax(x).data, np.log(softmax(x).data), atol=1e-12)


def test_detach_blocks_gradient():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x.detach() * x
    y.backward()
    assert_close(x.grad, [2.0])  # only the non-detached factor contributes
