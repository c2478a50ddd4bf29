"""
File: gradcheck.py
Author: Chuncheng Zhang
Date: 2025-03-23
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    Finite-difference checking of the recorded gradients, and the check suites.

    The error of one element is |analytic - numeric| / max(1, |numeric|),
    numeric is the central difference (f(x + eps) - f(x - eps)) / 2eps.

    The suites are ops, lka, upsampler, geometry and full,
    each row is (name, max error, threshold, passed).

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-23 ------------------------
# Requirements and constants
import numpy as np

from dataclasses import dataclass
from typing import Callable
from tqdm.auto import tqdm
from loguru import logger

from .errors import ContractError
from . import tensor as T
from .tensor import Tensor, Tape, backward, no_grad, reduce
from . import nn_ops as nn
from .nn_ops import ConvSpec, conv2d
from .lka import LkaParams, lka_attention, lka_forward, effective_kernel_spec
from .upsampler import UpsamplerParams, offset_upsample
from .nn_ops import bilinear_resize
from .geometry import (CameraModel, PoseNet, se3_exp, backproject, project, warp,
                       pose_forward)
from .losses import ssim, photometric_error, smoothness, total_loss
from .depth_net import DepthNet, disp_to_depth

THRESHOLD = 1e-4
FULL_THRESHOLD = 1e-3
ORACLE_THRESHOLD = 1e-10

SCOPES = ['ops', 'lka', 'upsampler', 'geometry', 'full']

# The differentiable operations the ops suite has to cover.
OPS_COVERAGE = ['add', 'sub', 'mul', 'div', 'exp', 'log', 'sqrt', 'square', 'abs',
                'sin', 'cos', 'clamp', 'sum', 'mean', 'min_over_axis', 'reshape',
                'transpose', 'getitem', 'concat', 'stack', 'matmul',
                'conv2d', 'conv2d_strided', 'conv2d_dilated', 'conv2d_grouped',
                'conv2d_depthwise', 'conv2d_1x1', 'pixel_shuffle', 'pixel_unshuffle',
                'grid_sample', 'bilinear_resize', 'sigmoid', 'elu', 'concat_channels',
                'pad_replicate', 'box_filter3']


# %% ---- 2025-03-23 ------------------------
# Function and class
@dataclass
class CheckRow:
    name: str
    max_error: float
    threshold: float

    @property
    def passed(self):
        return bool(self.max_error <= self.threshold)


def grad_check(f: Callable, inputs: list, eps: float = 1e-5, samples: int = None,
               rng: np.random.Generator = None) -> float:
    '''
    Compare the recorded gradient of f with the central differences.

    :param f: callable() -> scalar Tensor, reading the inputs.
    :param inputs: the Tensors to check, requires_grad.
    :param eps: the perturbation, in [1e-7, 1e-3].
    :param samples: the elements checked per input, None for all.
    :param rng: picks the sampled elements.

    :return: the max error.
    '''
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f'eps must be in [1e-7, 1e-3], got {eps}')
    rng = rng or np.random.default_rng(0)
    for x in inputs:
        x.requires_grad = True
        x.zero_grad()

    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise ContractError(f'grad_check needs a scalar function, got shape {out.shape}')
    backward(tape, out)

    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        positions = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            positions = rng.choice(flat.size, samples, replace=False)
        for k in positions:
            saved = flat[k]
            with no_grad():
                flat[k] = saved + eps
                up = f().item()
                flat[k] = saved - eps
                down = f().item()
            flat[k] = saved
            numeric = (up - down) / (2 * eps)
            err = abs(analytic.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def _param(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _check(name, fn, inputs, rng, threshold=THRESHOLD, **kwargs) -> CheckRow:
    w_rng = np.random.default_rng(rng.integers(1 << 31))
    direction = {}

    def f():
        out = fn()
        if 'w' not in direction:
            direction['w'] = Tensor(w_rng.normal(size=out.shape))
        return reduce(out * direction['w'], 'sum')

    err = grad_check(f, inputs, rng=rng, **kwargs)
    logger.debug(f'{name}: {err:.3e}')
    return CheckRow(name, err, threshold)


def ops_suite(rng: np.random.Generator) -> list:
    rows = []
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    pos = _param(rng, 3, 4, lo=0.5, hi=2.0)
    rows.append(_check('add', lambda: a + b, [a, b], rng))
    rows.append(_check('sub', lambda: a - b, [a, b], rng))
    rows.append(_check('mul', lambda: a * b, [a, b], rng))
    rows.append(_check('div', lambda: a / pos, [a, pos], rng))
    rows.append(_check('exp', lambda: T.exp(a), [a], rng))
    rows.append(_check('log', lambda: T.log(pos), [pos], rng))
    rows.append(_check('sqrt', lambda: T.sqrt(pos), [pos], rng))
    rows.append(_check('square', lambda: T.square(a), [a], rng))
    away = Tensor(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1, 1], (3, 4)),
                  requires_grad=True)
    rows.append(_check('abs', lambda: T.absolute(away), [away], rng))
    rows.append(_check('sin', lambda: T.sin(a), [a], rng))
    rows.append(_check('cos', lambda: T.cos(a), [a], rng))
    rows.append(_check('clamp', lambda: T.clamp(away, -0.5, 0.5), [away], rng))
    rows.append(_check('sum', lambda: T.reduce(a, 'sum', axis=1), [a], rng))
    rows.append(_check('mean', lambda: T.reduce(a, 'mean', axis=0, keepdims=True), [a], rng))
    distinct = Tensor(rng.permutation(12).reshape(3, 4) * 0.1, requires_grad=True)
    rows.append(_check('min_over_axis', lambda: T.reduce(distinct, 'min_over_axis', axis=0),
                       [distinct], rng))
    rows.append(_check('reshape', lambda: T.reshape(a, (4, 3)), [a], rng))
    rows.append(_check('transpose', lambda: T.transpose(a, (1, 0)), [a], rng))
    rows.append(_check('getitem', lambda: T.getitem(a, (slice(0, 2), np.array([0, 0, 3]))),
                       [a], rng))
    rows.append(_check('concat', lambda: T.concat([a, b], axis=1), [a, b], rng))
    rows.append(_check('stack', lambda: T.stack([a, b], axis=0), [a, b], rng))
    m = _param(rng, 4, 2)
    rows.append(_check('matmul', lambda: T.matmul(a, m), [a, m], rng))

    for name, kwargs in (('conv2d', dict(in_c=3, out_c=4, k=3)),
                         ('conv2d_strided', dict(in_c=3, out_c=2, k=3, stride=2, padding=1)),
                         ('conv2d_dilated', dict(in_c=2, out_c=2, k=3, dilation=2)),
                         ('conv2d_grouped', dict(in_c=4, out_c=4, k=3, groups=2)),
                         ('conv2d_depthwise', dict(in_c=3, out_c=3, k=5, groups=3)),
                         ('conv2d_1x1', dict(in_c=3, out_c=5, k=1))):
        in_c, out_c, k = kwargs.pop('in_c'), kwargs.pop('out_c'), kwargs.pop('k')
        spec = ConvSpec.create(in_c, out_c, k, rng, **kwargs)
        x = _param(rng, in_c, 7, 6)
        rows.append(_check(name, lambda x=x, spec=spec: conv2d(x, spec),
                           [x] + spec.parameters(), rng))

    x8 = _param(rng, 8, 3, 2)
    rows.append(_check('pixel_shuffle', lambda: nn.pixel_shuffle(x8, 2), [x8], rng))
    x4 = _param(rng, 2, 4, 6)
    rows.append(_check('pixel_unshuffle', lambda: nn.pixel_unshuffle(x4, 2), [x4], rng))

    img = _param(rng, 2, 5, 6)
    # Coordinates off the integer lines, the bilinear weights have kinks there.
    coords = Tensor(np.stack([rng.integers(0, 5, (4, 4)), rng.integers(0, 4, (4, 4))])
                    + rng.uniform(0.1, 0.9, (2, 4, 4)), requires_grad=True)
    rows.append(_check('grid_sample', lambda: nn.grid_sample(img, coords), [img, coords], rng))
    rows.append(_check('bilinear_resize', lambda: bilinear_resize(img, 2), [img], rng))
    rows.append(_check('sigmoid', lambda: nn.activation(a, 'sigmoid'), [a], rng))
    rows.append(_check('elu', lambda: nn.activation(away, 'elu'), [away], rng))
    other = _param(rng, 3, 5, 6)
    rows.append(_check('concat_channels', lambda: nn.concat_channels(img, other),
                       [img, other], rng))
    rows.append(_check('pad_replicate', lambda: nn.pad_replicate(img, 2), [img], rng))
    rows.append(_check('box_filter3', lambda: nn.box_filter3(img), [img], rng))
    return rows


def lka_oracle_error(params: LkaParams, x) -> float:
    '''
    Max abs difference of the bias-free attention path and the composed kernel conv.

    The input is zero-padded by the kernel radius before the cascade,
    so the intermediate maps are never cut by the per-stage padding.
    '''
    x = T.as_tensor(x)
    pad = (params.effective_size - 1) // 2
    padded = Tensor(np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))))
    with no_grad():
        cascade = lka_attention(padded, params).data[:, pad:-pad, pad:-pad]
        composed = conv2d(x, effective_kernel_spec(params)).data
    return float(np.abs(cascade - composed).max())


def lka_suite(rng: np.random.Generator) -> list:
    rows = []
    params = LkaParams.create(3, rng)
    x = _param(rng, 3, 9, 10)
    rows.append(_check('lka_attention', lambda: lka_attention(x, params),
                       [x] + params.parameters(), rng))
    rows.append(_check('lka_forward', lambda: lka_forward(x, params),
                       [x] + params.parameters(), rng))
    worst = 0.0
    for _ in range(5):
        c = int(rng.integers(1, 5))
        bias_free = LkaParams.create(c, rng, bias=False)
        h, w = rng.integers(4, 25, 2)
        worst = max(worst, lka_oracle_error(bias_free, rng.normal(size=(c, h, w))))
    rows.append(CheckRow('lka_effective_kernel_oracle', worst, ORACLE_THRESHOLD))
    return rows


def upsampler_suite(rng: np.random.Generator) -> list:
    rows = []
    params = UpsamplerParams.create(3, rng, zero=False)
    x = _param(rng, 3, 5, 6)
    rows.append(_check('offset_upsample', lambda: offset_upsample(x, params),
                       [x] + params.parameters(), rng))
    zero = UpsamplerParams.create(3)
    with no_grad():
        diff = np.abs(offset_upsample(x, zero).data - bilinear_resize(x, 2).data).max()
    rows.append(CheckRow('upsampler_bilinear_equivalence', float(diff), 0.0))
    return rows


def _small_camera(h, w):
    return CameraModel(fx=0.6 * w, fy=1.2 * h, cx=0.5 * w - 0.3, cy=0.5 * h - 0.2,
                       width=w, height=h)


def geometry_suite(rng: np.random.Generator) -> list:
    rows = []
    w = _param(rng, 3, lo=-0.5, hi=0.5)
    t = _param(rng, 3)
    rows.append(_check('se3_exp', lambda: se3_exp(w, t).rotation, [w, t], rng))
    rows.append(_check('se3_exp_translation', lambda: se3_exp(w, t).translation, [t], rng))

    h, wd = 8, 12
    cam = _small_camera(h, wd)
    depth = _param(rng, 1, h, wd, lo=2.0, hi=6.0)
    source = Tensor(rng.uniform(size=(3, h, wd)))
    pose = se3_exp(Tensor([0.02, -0.03, 0.01]), Tensor([0.11, 0.04, 0.13]))
    rows.append(_check('warp_wrt_depth',
                       lambda: warp(source, project(backproject(depth, cam), cam, pose)),
                       [depth], rng))

    a, b = _param(rng, 3, 6, 7, lo=0, hi=1), Tensor(rng.uniform(size=(3, 6, 7)))
    rows.append(_check('ssim', lambda: ssim(a, b), [a], rng))
    rows.append(_check('photometric_error', lambda: photometric_error(a, b), [a], rng))
    disp = _param(rng, 1, 6, 7, lo=0.2, hi=0.9)
    rows.append(_check('smoothness', lambda: smoothness(disp, b), [disp], rng))
    disp_full = _param(rng, 1, h, wd, lo=0.1, hi=0.9)
    rows.append(_check('disp_to_depth', lambda: disp_to_depth(disp_full), [disp_full], rng))

    net = PoseNet(pose_channels=(4, 4, 4, 4, 4), seed=int(rng.integers(1000)))
    target = Tensor(rng.uniform(size=(3, h * 2, wd * 2)))
    src = Tensor(rng.uniform(size=(3, h * 2, wd * 2)))
    cam2 = _small_camera(h * 2, wd * 2)
    fixed_depth = Tensor(rng.uniform(2.0, 6.0, (1, h * 2, wd * 2)))

    def pose_loss():
        T_ = se3_exp(*pose_forward(target, src, net))
        return photometric_error(warp(src, project(backproject(fixed_depth, cam2), cam2, T_)),
                                 target)

    rows.append(_check('pose_warp_loss', pose_loss, net.parameters(), rng, samples=3))
    return rows


def full_suite(rng: np.random.Generator, samples: int = 2) -> list:
    '''The whole objective on the 32x64 crop, tiny channel plan, sampled elements.'''
    h, wd = 32, 64
    depth_net = DepthNet(channels=(4, 4, 4, 4), seed=int(rng.integers(1000)))
    pose_net = PoseNet(pose_channels=(4, 4, 4, 4, 4), seed=int(rng.integers(1000)))
    cam = _small_camera(h, wd)
    target = Tensor(rng.uniform(size=(3, h, wd)))
    sources = [Tensor(rng.uniform(size=(3, h, wd))) for _ in range(2)]
    params = depth_net.parameters() + pose_net.parameters()

    def f():
        return total_loss([(target, sources)], depth_net, pose_net, [cam]).total

    err = grad_check(f, params, samples=samples, rng=rng)
    return [CheckRow('total_loss', err, FULL_THRESHOLD)]


SUITES = dict(ops=ops_suite, lka=lka_suite, upsampler=upsampler_suite,
              geometry=geometry_suite, full=full_suite)


def run_suites(scopes: list, seed: int = 0) -> list:
    '''
    Run the suites at 64-bit.

    :param scopes: subset of SCOPES, 'all' expands to every scope.

    :return: list of (scope, CheckRow).
    '''
    if 'all' in scopes:
        scopes = SCOPES
    unknown = set(scopes) - set(SCOPES)
    if unknown:
        raise ContractError(f'Unknown gradcheck scopes: {sorted(unknown)}')
    saved = T.DTYPE
    T.set_default_dtype(64)
    rows = []
    try:
        for scope in tqdm(scopes, desc='Gradcheck'):
            rng = np.random.default_rng([seed, SCOPES.index(scope)])
            rows.extend((scope, row) for row in SUITES[scope](rng))
    finally:
        T.set_default_dtype(64 if saved == np.float64 else 32)
    return rows


# %% ---- 2025-03-23 ------------------------
# Play ground
if __name__ == '__main__':
    for scope, row in run_suites(['ops', 'lka']):
        logger.info(f'{scope} {row.name} {row.max_error:.2e} {row.passed}')


# %% ---- 2025-03-23 ------------------------
# Pending
