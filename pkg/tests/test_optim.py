import numpy as np
import pytest

from numpy.testing import assert_allclose

from lka_depth.errors import ContractError
from lka_depth.tensor import Tensor, Tape, backward, reduce, square
from lka_depth.config import load_config
from lka_depth.optim import Adam, step_lr


def test_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.array([0.5, -4.0, 0.0])
    Adam([p], lr=0.1).step()
    # The bias corrected first step is lr * g / (|g| + eps).
    assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-8)


def test_params_without_grad_are_skipped():
    p = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([p], lr=0.1)
    opt.step()
    assert_allclose(p.data, 1.0)
    assert opt.t == 1


def test_minimizes_quadratic():
    target = np.array([0.3, -1.2, 2.0])
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam([p], lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        with Tape() as tape:
            loss = reduce(square(p - Tensor(target)), 'sum')
        backward(tape, loss)
        opt.step()
    assert_allclose(p.data, target, atol=1e-2)


def test_invalid_lr():
    with pytest.raises(ContractError):
        Adam([], lr=0.0)


def test_step_lr():
    conf = load_config()
    assert [step_lr(e, conf) for e in (0, 14, 15, 19)] == [1e-4, 1e-4, 1e-5, 1e-5]
