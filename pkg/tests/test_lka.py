import numpy as np
import pytest

from numpy.testing import assert_allclose, assert_array_equal

from lka_depth.errors import ShapeError, ContractError
from lka_depth.tensor import Tensor, Tape, backward, reduce
from lka_depth.gradcheck import grad_check, lka_oracle_error
from lka_depth.nn_ops import ConvSpec
from lka_depth.lka import LkaParams, lka_attention, lka_forward, lka_effective_kernel


def delta_params(C, dwd_tap=(3, 3)):
    '''dw and pw are identities, dwd has one tap.'''
    dw = np.zeros((C, 1, 5, 5))
    dw[:, 0, 2, 2] = 1
    dwd = np.zeros((C, 1, 7, 7))
    dwd[:, 0, dwd_tap[0], dwd_tap[1]] = 1
    return LkaParams(
        dw=ConvSpec(weight=Tensor(dw), padding=2, groups=C),
        dwd=ConvSpec(weight=Tensor(dwd), padding=9, dilation=3, groups=C),
        pw=ConvSpec(weight=Tensor(np.eye(C)[:, :, None, None])))


def test_default_layout():
    params = LkaParams.create(4)
    assert params.dw.kernel_size == (5, 5) and params.dw.padding == (2, 2)
    assert params.dwd.kernel_size == (7, 7) and params.dwd.dilation == (3, 3)
    assert params.dwd.padding == (9, 9)
    assert params.dw.is_depthwise and params.dwd.is_depthwise
    assert params.pw.groups == 1
    assert params.effective_size == 23


def test_zero_params_give_zero(rng):
    params = LkaParams.create(3, rng)
    for p in params.parameters():
        p.data[...] = 0
    assert_array_equal(lka_forward(Tensor(rng.normal(size=(3, 8, 8))), params).data, 0)
    bias_free = LkaParams.create(3, rng, bias=False)
    assert_array_equal(lka_forward(Tensor(np.zeros((3, 8, 8))), bias_free).data, 0)


def test_shape_and_channel_check(rng):
    params = LkaParams.create(4, rng)
    assert lka_forward(Tensor(rng.normal(size=(4, 7, 9))), params).shape == (4, 7, 9)
    with pytest.raises(ShapeError):
        lka_forward(Tensor(np.zeros((3, 7, 9))), params)


def test_effective_kernel_delta():
    kernel = lka_effective_kernel(delta_params(2)).data
    expected = np.zeros((2, 2, 23, 23))
    expected[0, 0, 11, 11] = expected[1, 1, 11, 11] = 1
    assert_array_equal(kernel, expected)


def test_effective_kernel_dilation_placement():
    # dwd tap (1, 5) sits at offset 3 * ((1, 5) - 3) from the center.
    kernel = lka_effective_kernel(delta_params(1, dwd_tap=(1, 5))).data[0, 0]
    assert kernel[11 - 6, 11 + 6] == 1
    assert kernel.sum() == 1


@pytest.mark.parametrize('key', ['dw', 'dwd', 'pw'])
def test_effective_kernel_rejects_bias(key):
    params = delta_params(2)
    spec = getattr(params, key)
    spec.bias = Tensor(np.zeros(spec.out_channels))
    assert lka_effective_kernel(params).shape == (2, 2, 23, 23)
    with pytest.raises(ContractError):
        lka_effective_kernel(params, bias_free=False)
    spec.bias.data[1] = 0.25
    with pytest.raises(ContractError):
        lka_effective_kernel(params)


def test_composed_kernel_oracle(rng):
    for _ in range(20):
        C = int(rng.integers(1, 5))
        h, w = rng.integers(4, 25, 2)
        params = LkaParams.create(C, rng, bias=False)
        assert lka_oracle_error(params, rng.normal(size=(C, h, w))) < 1e-10


def test_attention_is_linear_without_bias(rng):
    params = LkaParams.create(2, rng, bias=False)
    a, b = rng.normal(size=(2, 2, 10, 10))
    lhs = lka_attention(Tensor(1.5 * a + 0.5 * b), params).data
    rhs = (1.5 * lka_attention(Tensor(a), params).data
           + 0.5 * lka_attention(Tensor(b), params).data)
    assert_allclose(lhs, rhs, atol=1e-12)


def test_receptive_field_support(rng):
    params = LkaParams.create(2, rng, bias=False)
    x = Tensor(rng.normal(size=(2, 31, 31)), requires_grad=True)
    with Tape() as tape:
        loss = reduce(lka_attention(x, params)[0, 15, 15], 'sum')
    backward(tape, loss)
    support = np.abs(x.grad).sum(axis=0) > 0
    rows, cols = np.nonzero(support)
    assert rows.min() == 15 - 11 and rows.max() == 15 + 11
    assert cols.min() == 15 - 11 and cols.max() == 15 + 11


def test_gradient_through_both_paths(rng):
    params = LkaParams.create(2, rng)
    x = Tensor(rng.normal(size=(2, 6, 7)))
    w = Tensor(rng.normal(size=(2, 6, 7)))
    err = grad_check(lambda: reduce(lka_forward(x, params) * w, 'sum'),
                     [x] + params.parameters())
    assert err < 1e-4
