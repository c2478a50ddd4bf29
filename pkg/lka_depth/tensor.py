"""
File: tensor.py
Author: Chuncheng Zhang
Date: 2025-03-14
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The dense tensor value and the tape for reverse-mode differentiation.

    Every operation records a Node onto the active Tape when any of its inputs
    requires gradient.  The backward method replays the nodes in reverse
    recording order and pushes the vector-Jacobian products back to the leaves.

    Usage:
        with Tape() as tape:
            loss = reduce(x * x, 'sum')
        backward(tape, loss)
        x.grad

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-14 ------------------------
# Requirements and constants
import os
import weakref
import threading
import contextlib
import numpy as np

from dataclasses import dataclass
from typing import Callable, Sequence
from loguru import logger

from .errors import ShapeError, DomainError, ContractError, NumericalError

# The default float type, 64-bit for gradient checking, 32-bit is optional for speed.
DTYPE = np.float64

# Finite checks after every op, enabled by LKADEPTH_DEBUG=1.
DEBUG = os.environ.get('LKADEPTH_DEBUG', '0') == '1'

_local = threading.local()


def set_default_dtype(precision: int):
    '''
    Set the default float precision.

    :param precision: 64 or 32.
    '''
    global DTYPE
    if precision not in (32, 64):
        raise ContractError(f'Precision must be 32 or 64, got {precision}')
    DTYPE = np.float64 if precision == 64 else np.float32
    logger.debug(f'Default dtype set to {DTYPE.__name__}')
    return DTYPE


def set_debug(flag: bool):
    global DEBUG
    DEBUG = bool(flag)


# %% ---- 2025-03-14 ------------------------
# Function and class
class Tensor(object):
    '''
    Dense N-D array with an optional gradient slot.

    The data is stored row-major (C order).
    The tensors are not mutated by the operations,
    only the optimizer updates the parameters in-place between steps.
    '''

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        # 0-d scalars stay 0-d.
        self.data = np.asarray(data, dtype=dtype or DTYPE, order='C')
        self.requires_grad = bool(requires_grad)
        self.grad = None
        # The node producing the tensor, None for the leaves.
        self._node = None

    def __repr__(self):
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad})'

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    # Operators
    def __add__(self, other):
        return elementwise(self, other, 'add')

    def __radd__(self, other):
        return elementwise(other, self, 'add')

    def __sub__(self, other):
        return elementwise(self, other, 'sub')

    def __rsub__(self, other):
        return elementwise(other, self, 'sub')

    def __mul__(self, other):
        return elementwise(self, other, 'mul')

    def __rmul__(self, other):
        return elementwise(other, self, 'mul')

    def __truediv__(self, other):
        return elementwise(self, other, 'div')

    def __rtruediv__(self, other):
        return elementwise(other, self, 'div')

    def __neg__(self):
        return elementwise(self, -1.0, 'mul')

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, 'sum', axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, 'mean', axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    '''Wrap the value as a constant tensor if it is not a tensor already.'''
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class Node:
    '''
    One recorded operation, vjp maps grad_out to the grads of the inputs.

    The output is held weakly, the tensor owns its node and not the other way round,
    so a dropped graph is freed by refcounting.
    '''
    name: str
    inputs: tuple
    output: weakref.ref
    vjp: Callable


class Tape(object):
    '''
    Ordered record of the operations.

    The tape is confined to the thread entering it,
    the context manager pushes it onto the thread-local stack.
    '''

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor, vjp: Callable):
        node = Node(name, tuple(inputs), weakref.ref(output), vjp)
        output._node = node
        self.nodes.append(node)
        return node

    def reset(self):
        '''Drop the recorded nodes, the activations they hold are released.'''
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def _stack():
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def current_tape():
    '''The active tape of the calling thread, None when nothing is recorded.'''
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    '''Suspend the recording, the nested ops behave as constants.'''
    stack = _stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def make_result(name: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    '''
    Wrap the op output and record it onto the active tape.

    :param name: the op name, for the debug log.
    :param data: the output array.
    :param inputs: the input tensors.
    :param vjp: callable(grad_out) -> tuple of grads, one per input, None for skipping.

    :return: the output tensor.
    '''
    out = Tensor(data)
    if DEBUG and not np.all(np.isfinite(out.data)):
        finite_inputs = all(np.all(np.isfinite(t.data)) for t in inputs)
        if finite_inputs:
            raise NumericalError(f'{name} produced NaN/Inf from finite inputs')
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(name, inputs, out, vjp)
    return out


def backward(tape: Tape, loss: Tensor):
    '''
    Accumulate d(loss)/d(leaf) into the grad of every requires_grad leaf.

    Repeated calls without zero_grad accumulate.

    :param tape: the tape recorded the computation.
    :param loss: the scalar loss.
    '''
    if loss.size != 1:
        raise ContractError(f'Loss must be scalar, got shape {loss.shape}')

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        if loss.requires_grad:
            _accumulate(loss, seed)
        return

    grads = {id(loss): seed}
    for node in reversed(tape.nodes):
        out = node.output()
        # Dropped outputs fed nothing that reaches the loss.
        if out is None:
            continue
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(
                    f'{node.name} returned grad {gi.shape} for input {t.shape}')
            if t.is_leaf:
                _accumulate(t, gi)
            elif id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi
    return


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


# Index helpers.
def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    '''Row-major flat position of the multi-index.'''
    return int(np.ravel_multi_index(tuple(index), tuple(shape)))


def unflat_index(shape: Sequence[int], k: int) -> tuple:
    '''Multi-index of the row-major flat position k.'''
    return tuple(int(e) for e in np.unravel_index(k, tuple(shape)))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    '''Sum the gradient back onto the broadcast input shape.'''
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# Elementwise ops.
def elementwise(a, b, kind: str) -> Tensor:
    '''
    Binary elementwise operation with broadcasting.

    :param a, b: tensors or scalars.
    :param kind: 'add', 'sub', 'mul' or 'div'.

    :return: the output tensor.
    '''
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f'Can not broadcast {a.shape} with {b.shape}')

    ad, bd = a.data, b.data
    if kind == 'add':
        data = ad + bd

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    elif kind == 'sub':
        data = ad - bd

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    elif kind == 'mul':
        data = ad * bd

        def vjp(g):
            return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)
    elif kind == 'div':
        data = ad / bd

        def vjp(g):
            return (_unbroadcast(g / bd, a.shape),
                    _unbroadcast(-g * ad / (bd * bd), b.shape))
    else:
        raise ContractError(f'Unknown elementwise kind: {kind}')

    return make_result(kind, data, (a, b), vjp)


def _unary(name, x: Tensor, data: np.ndarray, local_grad: np.ndarray) -> Tensor:
    return make_result(name, data, (x,), lambda g: (g * local_grad,))


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)
    return _unary('exp', x, data, data)


def log(x: Tensor) -> Tensor:
    return _unary('log', x, np.log(x.data), 1.0 / x.data)


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)
    return _unary('sqrt', x, data, 0.5 / data)


def square(x: Tensor) -> Tensor:
    return _unary('square', x, x.data * x.data, 2.0 * x.data)


def absolute(x: Tensor) -> Tensor:
    return _unary('abs', x, np.abs(x.data), np.sign(x.data))


def sin(x: Tensor) -> Tensor:
    return _unary('sin', x, np.sin(x.data), np.cos(x.data))


def cos(x: Tensor) -> Tensor:
    return _unary('cos', x, np.cos(x.data), -np.sin(x.data))


def clamp(x: Tensor, lo: float = None, hi: float = None) -> Tensor:
    '''Clamp into [lo, hi], the gradient passes where the value is inside.'''
    data = np.clip(x.data, lo, hi)
    inside = np.ones_like(x.data)
    if lo is not None:
        inside *= x.data >= lo
    if hi is not None:
        inside *= x.data <= hi
    return _unary('clamp', x, data, inside)


# Reductions.
def reduce(a: Tensor, kind: str, axis: int = None, keepdims: bool = False) -> Tensor:
    '''
    Reduce the tensor.

    :param kind: 'sum', 'mean' or 'min_over_axis'.
    :param axis: the axis, None for all the elements (not for min_over_axis).

    min_over_axis routes the gradient to the argmin element,
    the ties go to the lowest index.
    '''
    a = as_tensor(a)
    if a.size == 0:
        raise DomainError('Can not reduce an empty tensor')
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ContractError(f'Invalid axis {axis} for shape {a.shape}')

    if kind == 'sum':
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, a.shape).copy(),
    elif kind == 'mean':
        n = a.size if axis is None else a.shape[axis]
        data = a.data.mean(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g / n, a.shape).copy(),
    elif kind == 'min_over_axis':
        if axis is None:
            raise ContractError('min_over_axis needs an axis')
        idx = np.expand_dims(np.argmin(a.data, axis=axis), axis)
        data = np.take_along_axis(a.data, idx, axis=axis)
        if not keepdims:
            data = np.squeeze(data, axis=axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            out = np.zeros_like(a.data)
            np.put_along_axis(out, idx, g, axis=axis)
            return out,
    else:
        raise ContractError(f'Unknown reduction: {kind}')

    return make_result(kind, data, (a,), vjp)


# Shape ops.
def reshape(a: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f'Can not reshape {a.shape} into {shape}')
    return make_result('reshape', data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result('transpose', a.data.transpose(axes), (a,),
                       lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, key) -> Tensor:
    '''Indexing, the gradient is scattered back with np.add.at.'''
    data = a.data[key]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return out,

    return make_result('getitem', np.array(data), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f'Can not concat: {err}')
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result('concat', data, tensors, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f'Can not stack: {err}')

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result('stack', data, tensors, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    '''Matrix product of 2-D tensors.'''
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f'Can not matmul {a.shape} with {b.shape}')
    return make_result('matmul', a.data @ b.data, (a, b),
                       lambda g: (g @ b.data.T, a.data.T @ g))


# %% ---- 2025-03-14 ------------------------
# Play ground
if __name__ == '__main__':
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = reduce(x * x, 'sum')
    backward(tape, loss)
    logger.info(f'loss={loss.item()}, grad={x.grad}')


# %% ---- 2025-03-14 ------------------------
# Pending
