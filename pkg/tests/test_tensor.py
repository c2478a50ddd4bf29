import gc
import weakref
import numpy as np
import pytest

from numpy.testing import assert_allclose, assert_array_equal

from lka_depth import tensor as T
from lka_depth.errors import ShapeError, DomainError, ContractError, NumericalError
from lka_depth.tensor import Tensor, Tape, backward, reduce, elementwise, no_grad
from lka_depth.gradcheck import grad_check
from lka_depth.nn_ops import ConvSpec, conv2d, activation


def test_elementwise_trivial():
    assert_array_equal(elementwise(Tensor([1, 2, 3]), Tensor([0, 0, 0]), 'mul').data, [0, 0, 0])
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert_array_equal((x + Tensor(np.zeros((2, 3)))).data, x.data)


def test_elementwise_broadcast_and_mismatch():
    a = Tensor(np.ones((2, 3)))
    assert (a * Tensor([1.0, 2.0, 3.0])).shape == (2, 3)
    with pytest.raises(ShapeError):
        a + Tensor(np.ones((4,)))


def test_mul_gradient(rng):
    a = Tensor(rng.normal(size=(2, 3)))
    b = Tensor(rng.normal(size=(2, 3)))
    assert grad_check(lambda: reduce(a * b, 'sum'), [a, b], eps=1e-5) < 1e-6


def test_broadcast_gradient_sums_back(rng):
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        loss = reduce(a * b, 'sum')
    backward(tape, loss)
    assert_allclose(b.grad, a.data.sum(axis=0))


def test_reduce_examples():
    assert reduce(Tensor([1, 2, 3]), 'sum').item() == 6
    assert_array_equal(reduce(Tensor([[3, 1], [2, 5]]), 'min_over_axis', axis=1).data, [1, 2])
    with pytest.raises(DomainError):
        reduce(Tensor(np.zeros((0, 3))), 'sum')
    with pytest.raises(ContractError):
        reduce(Tensor([1.0, 2.0]), 'min_over_axis')


def test_min_over_axis_ties_go_to_lowest_index():
    x = Tensor([[2.0, 1.0, 1.0], [0.5, 0.5, 3.0]], requires_grad=True)
    with Tape() as tape:
        loss = reduce(reduce(x, 'min_over_axis', axis=1), 'sum')
    backward(tape, loss)
    assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


def test_mean_gradient(rng):
    x = Tensor(rng.normal(size=(4, 4)))
    assert grad_check(lambda: reduce(x, 'mean'), [x]) < 1e-6


def test_backward_examples():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = reduce(x, 'sum')
    backward(tape, loss)
    assert_array_equal(x.grad, np.ones((2, 2)))

    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = reduce(x * x, 'sum')
    backward(tape, loss)
    assert_array_equal(x.grad, [2.0, 4.0])

    # Accumulates without zero_grad.
    backward(tape, loss)
    assert_array_equal(x.grad, [4.0, 8.0])


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        backward(tape, y)


def test_tensor_used_twice_sums_both_branches():
    x = Tensor([1.5, -2.0, 0.5], requires_grad=True)
    with Tape() as tape:
        loss = reduce(T.exp(x) * x, 'sum')
    backward(tape, loss)
    assert_allclose(x.grad, np.exp(x.data) * (1 + x.data))


def test_composite_conv_graph(rng):
    spec = ConvSpec.create(2, 3, 3, rng)
    x = Tensor(rng.normal(size=(2, 6, 5)))
    err = grad_check(lambda: reduce(activation(conv2d(x, spec), 'sigmoid'), 'sum'),
                     [x] + spec.parameters())
    assert err < 1e-4


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = x * x
        z = x + 1.0
    assert len(tape) == 1
    assert not y.requires_grad and z.requires_grad


def test_flat_index_roundtrip():
    shape = (3, 4, 5)
    for k in range(int(np.prod(shape))):
        assert T.flat_index(shape, T.unflat_index(shape, k)) == k


def test_grad_check_contract(rng):
    x = Tensor(rng.normal(size=(3,)))
    assert grad_check(lambda: reduce(x, 'sum'), [x]) < 1e-8
    assert grad_check(lambda: reduce(activation(x, 'sigmoid'), 'sum'), [x], eps=1e-5) < 1e-6
    with pytest.raises(ContractError):
        grad_check(lambda: reduce(x, 'sum'), [x], eps=1e-2)
    with pytest.raises(ContractError):
        grad_check(lambda: x * 2.0, [x])


def test_debug_mode_catches_non_finite():
    T.set_debug(True)
    with np.errstate(all='ignore'), pytest.raises(NumericalError):
        T.log(Tensor([0.0, 1.0]))


def test_precision_switch():
    T.set_default_dtype(32)
    assert Tensor([1.0]).data.dtype == np.float32
    with pytest.raises(ContractError):
        T.set_default_dtype(16)


def test_scalars_stay_zero_dimensional():
    assert Tensor(0.0).shape == ()
    assert Tensor(np.float64(2.5)).ndim == 0
    assert reduce(Tensor([1.0, 2.0]), 'sum').shape == ()
    assert T.stack([Tensor(1.0), Tensor(2.0), Tensor(3.0)]).shape == (3,)


def test_scalar_index_gradient():
    x = Tensor(np.arange(8.0).reshape(2, 2, 2), requires_grad=True)
    with Tape() as tape:
        y = (x * x)[0, 1, 1]
    assert y.shape == ()
    backward(tape, y)
    expected = np.zeros((2, 2, 2))
    expected[0, 1, 1] = 2 * x.data[0, 1, 1]
    assert_array_equal(x.grad, expected)


def test_dropped_graph_is_freed_without_the_collector():
    x = Tensor(np.ones((4, 4)), requires_grad=True)
    gc.disable()
    try:
        with Tape() as tape:
            hidden = T.exp(x) * x
            loss = reduce(hidden, 'sum')
        ref = weakref.ref(hidden)
        backward(tape, loss)
        del hidden
        assert ref() is not None
        tape.reset()
        del loss
        assert ref() is None
        assert len(tape) == 0
    finally:
        gc.enable()
    assert_allclose(x.grad, np.exp(1.0) * 2)
