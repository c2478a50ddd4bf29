"""
File: nn_ops.py
Author: Chuncheng Zhang
Date: 2025-03-15
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The convolution and resampling operators.

    - conv2d: grouped, dilated, strided cross-correlation with zero padding.
    - pixel_shuffle / pixel_unshuffle.
    - grid_sample: bilinear sampling with border clamp.
    - bilinear_resize: grid_sample on the half-pixel grid.
    - activation, concat_channels, pad_replicate, box_filter3.

    The coordinates are in pixels, the pixel (i, j) has its center at x=j, y=i.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-15 ------------------------
# Requirements and constants
import threading
import contextlib
import numpy as np

from dataclasses import dataclass
from loguru import logger

from .errors import ShapeError, ContractError
from .tensor import (Tensor, as_tensor, make_result, reshape, transpose,
                     concat, getitem)

_profile = threading.local()


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# %% ---- 2025-03-15 ------------------------
# Function and class
@dataclass
class ConvSpec:
    '''
    The parameters of one convolution.

    weight: [outC, inC/groups, kH, kW].
    bias: [outC] or None.
    padding is zero padding in pixels.
    '''
    weight: Tensor
    bias: Tensor = None
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    dilation: tuple = (1, 1)
    groups: int = 1

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        self.dilation = _pair(self.dilation)
        self.groups = int(self.groups)
        if self.weight.ndim != 4:
            raise ShapeError(f'Conv weight must be 4-D, got {self.weight.shape}')
        if self.groups < 1 or self.out_channels % self.groups:
            raise ShapeError(
                f'outC={self.out_channels} is not divisible by groups={self.groups}')
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ShapeError(f'Bias shape {self.bias.shape} does not match outC')

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self):
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def is_depthwise(self):
        return (self.groups == self.in_channels == self.out_channels
                and self.weight.shape[1] == 1)

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def param_count(self):
        return sum(p.size for p in self.parameters())

    @classmethod
    def create(cls, in_channels: int, out_channels: int, kernel_size: int,
               rng: np.random.Generator = None, stride=1, padding=None, dilation=1,
               groups: int = 1, bias: bool = True, zero: bool = False):
        '''
        Make the spec with freshly initialized parameters.

        The weights and biases are uniform in +-1/sqrt(fan_in),
        padding defaults to the "same" padding for stride 1.

        :param zero: initialize everything as zeros.
        '''
        kH, kW = _pair(kernel_size)
        dH, dW = _pair(dilation)
        if in_channels % groups:
            raise ShapeError(
                f'inC={in_channels} is not divisible by groups={groups}')
        if padding is None:
            padding = (dH * (kH - 1) // 2, dW * (kW - 1) // 2)
        shape = (out_channels, in_channels // groups, kH, kW)
        if zero:
            weight = np.zeros(shape)
            b = np.zeros(out_channels) if bias else None
        else:
            rng = rng or np.random.default_rng(0)
            bound = 1.0 / np.sqrt(shape[1] * kH * kW)
            weight = rng.uniform(-bound, bound, shape)
            b = rng.uniform(-bound, bound, out_channels) if bias else None
        return cls(weight=Tensor(weight, requires_grad=True),
                   bias=Tensor(b, requires_grad=True) if b is not None else None,
                   stride=stride, padding=padding, dilation=dilation, groups=groups)


@dataclass
class SampleGrid:
    '''Continuous source coordinates, coords[0] is x and coords[1] is y, in pixels.'''
    coords: Tensor

    def __post_init__(self):
        self.coords = as_tensor(self.coords)
        if self.coords.ndim != 3 or self.coords.shape[0] != 2:
            raise ShapeError(f'Grid must be [2, H, W], got {self.coords.shape}')

    @property
    def shape(self):
        return self.coords.shape[1:]


@contextlib.contextmanager
def count_macs():
    '''
    Collect the analytic multiply-accumulates of the convolutions in the block.

    Each conv2d call adds outC * (inC/groups) * kH * kW * Hout * Wout * N.

    :yield: the dict with 'total' and 'layers' (list of (shape string, macs)).
    '''
    tally = dict(total=0, layers=[])
    _profile.tally = tally
    try:
        yield tally
    finally:
        _profile.tally = None


def conv_output_size(size: int, k: int, s: int, p: int, d: int) -> int:
    return (size + 2 * p - d * (k - 1) - 1) // s + 1


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    '''
    Grouped, dilated 2-D cross-correlation (no kernel flip) with zero padding.

    :param x: [C, H, W] or [N, C, H, W].
    :param spec: the ConvSpec.

    :return: [outC, Hout, Wout] or [N, outC, Hout, Wout].
    '''
    x = as_tensor(x)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f'conv2d input must be 3-D or 4-D, got {x.shape}')
    xd = x.data if batched else x.data[None]
    N, C, H, W = xd.shape
    w = spec.weight.data
    O, Cg, kH, kW = w.shape
    G = spec.groups
    if C != Cg * G:
        raise ShapeError(f'conv2d got {C} channels, spec expects {Cg * G}')
    (sH, sW), (pH, pW), (dH, dW) = spec.stride, spec.padding, spec.dilation
    Ho = conv_output_size(H, kH, sH, pH, dH)
    Wo = conv_output_size(W, kW, sW, pW, dW)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f'conv2d output would be {Ho}x{Wo} for input {H}x{W}')

    xp = np.pad(xd, ((0, 0), (0, 0), (pH, pH), (pW, pW)))
    taps = [(ky, kx, (slice(None), slice(None),
                      slice(ky * dH, ky * dH + sH * (Ho - 1) + 1, sH),
                      slice(kx * dW, kx * dW + sW * (Wo - 1) + 1, sW)))
            for ky in range(kH) for kx in range(kW)]
    K, P, Og = Cg * kH * kW, Ho * Wo, O // G
    depthwise = G == C == O

    tally = getattr(_profile, 'tally', None)
    if tally is not None:
        macs = N * O * K * P
        tally['total'] += macs
        tally['layers'].append((f'{C}->{O} k{kH}x{kW} g{G} @ {Ho}x{Wo}', macs))

    if depthwise:
        # One multiply-add per tap, no column buffer.
        out = np.zeros((N, O, Ho, Wo), dtype=xd.dtype)
        for ky, kx, win in taps:
            out += w[None, :, 0, ky, kx, None, None] * xp[win]
    else:
        cols = np.empty((N, C, kH, kW, Ho, Wo), dtype=xd.dtype)
        for ky, kx, win in taps:
            cols[:, :, ky, kx] = xp[win]
        colsg = cols.reshape(N, G, K, P)
        wg = w.reshape(G, Og, K)
        out = np.matmul(wg, colsg).reshape(N, O, Ho, Wo)
    if spec.bias is not None:
        out = out + spec.bias.data[None, :, None, None]

    def vjp(g):
        gd = g if batched else g[None]
        dxp = np.zeros_like(xp)
        if depthwise:
            dw = np.zeros_like(w)
            for ky, kx, win in taps:
                dw[:, 0, ky, kx] = (gd * xp[win]).sum(axis=(0, 2, 3))
                dxp[win] += gd * w[None, :, 0, ky, kx, None, None]
        else:
            gg = gd.reshape(N, G, Og, P)
            dw = np.matmul(gg, colsg.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
            dcols = np.matmul(wg.transpose(0, 2, 1), gg).reshape(N, C, kH, kW, Ho, Wo)
            for ky, kx, win in taps:
                dxp[win] += dcols[:, :, ky, kx]
        dx = dxp[:, :, pH:pH + H, pW:pW + W]
        if not batched:
            dx = dx[0]
        grads = [np.ascontiguousarray(dx), dw]
        if spec.bias is not None:
            grads.append(gd.sum(axis=(0, 2, 3)))
        return tuple(grads)

    data = out if batched else out[0]
    return make_result('conv2d', data, [x] + spec.parameters(), vjp)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    '''
    Rearrange [C*r*r, H, W] into [C, r*H, r*W].

    out[c, r*i + di, r*j + dj] = in[c*r*r + di*r + dj, i, j]
    '''
    x = as_tensor(x)
    Cr, H, W = x.shape
    if Cr % (r * r):
        raise ShapeError(f'{Cr} channels are not divisible by r^2={r * r}')
    C = Cr // (r * r)
    y = reshape(x, (C, r, r, H, W))
    y = transpose(y, (0, 3, 1, 4, 2))
    return reshape(y, (C, H * r, W * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    '''Inverse of pixel_shuffle, [C, r*H, r*W] into [C*r*r, H, W].'''
    x = as_tensor(x)
    C, Hr, Wr = x.shape
    if Hr % r or Wr % r:
        raise ShapeError(f'Extents {Hr}x{Wr} are not divisible by r={r}')
    H, W = Hr // r, Wr // r
    y = reshape(x, (C, H, r, W, r))
    y = transpose(y, (0, 2, 4, 1, 3))
    return reshape(y, (C * r * r, H, W))


def half_pixel_coords(h: int, w: int, scale: int) -> np.ndarray:
    '''
    The half-pixel sampling coordinates of the scale-times upsampled grid.

    x = (j + 0.5) / scale - 0.5, y = (i + 0.5) / scale - 0.5

    :return: array [2, scale*h, scale*w].
    '''
    xs = (np.arange(scale * w) + 0.5) / scale - 0.5
    ys = (np.arange(scale * h) + 0.5) / scale - 0.5
    gx = np.broadcast_to(xs[None, :], (scale * h, scale * w))
    gy = np.broadcast_to(ys[:, None], (scale * h, scale * w))
    return np.stack([gx, gy])


def grid_sample(x: Tensor, grid) -> Tensor:
    '''
    Bilinear sampling of [C, H, W] at the continuous grid coordinates.

    The coordinates are clamped into [0, W-1] x [0, H-1] (border padding),
    the gradient flows into both the values and the coordinates.

    :param x: the source [C, H, W].
    :param grid: SampleGrid or Tensor [2, Hout, Wout].

    :return: [C, Hout, Wout].
    '''
    x = as_tensor(x)
    coords = grid.coords if isinstance(grid, SampleGrid) else as_tensor(grid)
    if x.ndim != 3:
        raise ShapeError(f'grid_sample input must be [C, H, W], got {x.shape}')
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f'Grid must be [2, H, W], got {coords.shape}')

    img = x.data
    C, H, W = img.shape
    gx, gy = coords.data[0], coords.data[1]
    cx = np.clip(gx, 0, W - 1)
    cy = np.clip(gy, 0, H - 1)
    x0 = np.minimum(np.floor(cx).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(cy).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = cx - x0
    wy = cy - y0

    v00, v01 = img[:, y0, x0], img[:, y0, x1]
    v10, v11 = img[:, y1, x0], img[:, y1, x1]
    top = (1 - wx) * v00 + wx * v01
    bottom = (1 - wx) * v10 + wx * v11
    out = (1 - wy) * top + wy * bottom

    def vjp(g):
        dimg = np.zeros((H * W, C), dtype=img.dtype)
        for yy, xx, weight in ((y0, x0, (1 - wy) * (1 - wx)),
                               (y0, x1, (1 - wy) * wx),
                               (y1, x0, wy * (1 - wx)),
                               (y1, x1, wy * wx)):
            np.add.at(dimg, (yy * W + xx).ravel(),
                      (g * weight).reshape(C, -1).T)
        inside_x = (gx >= 0) & (gx <= W - 1)
        inside_y = (gy >= 0) & (gy <= H - 1)
        dx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
        dy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
        dgrid = np.stack([(g * dx).sum(axis=0) * inside_x,
                          (g * dy).sum(axis=0) * inside_y])
        return dimg.T.reshape(C, H, W), dgrid

    return make_result('grid_sample', out, (x, coords), vjp)


def bilinear_resize(x: Tensor, scale: int) -> Tensor:
    '''Plain bilinear upsampling, grid_sample on the half-pixel identity grid.'''
    if int(scale) != scale or scale < 1:
        raise ContractError(f'Scale must be an integer >= 1, got {scale}')
    x = as_tensor(x)
    _, H, W = x.shape
    return grid_sample(x, Tensor(half_pixel_coords(H, W, int(scale))))


def activation(x: Tensor, kind: str) -> Tensor:
    '''
    Elementwise activation.

    :param kind: 'sigmoid' or 'elu'.
    '''
    x = as_tensor(x)
    d = x.data
    if kind == 'sigmoid':
        # Stable for the large negative inputs.
        e = np.exp(-np.abs(d))
        data = np.where(d >= 0, 1 / (1 + e), e / (1 + e))
        local = data * (1 - data)
    elif kind == 'elu':
        data = np.where(d > 0, d, np.expm1(np.minimum(d, 0)))
        local = np.where(d > 0, 1.0, np.exp(np.minimum(d, 0)))
    else:
        raise ContractError(f'Unknown activation: {kind}')
    return make_result(kind, data, (x,), lambda g: (g * local,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    '''Stack [Ca, H, W] and [Cb, H, W] into [Ca + Cb, H, W].'''
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f'Can not concat channels of {a.shape} and {b.shape}')
    return concat([a, b], axis=0)


def pad_replicate(x: Tensor, p: int) -> Tensor:
    '''Replicate-pad the spatial extents of [C, H, W] by p pixels.'''
    _, H, W = x.shape
    iy = np.clip(np.arange(-p, H + p), 0, H - 1)
    ix = np.clip(np.arange(-p, W + p), 0, W - 1)
    return getitem(x, (slice(None), iy[:, None], ix[None, :]))


def box_filter3(x: Tensor) -> Tensor:
    '''3x3 mean of [C, H, W] with replicate padding, output has the same extents.'''
    C = x.shape[0]
    spec = ConvSpec(weight=Tensor(np.full((C, 1, 3, 3), 1.0 / 9)), groups=C)
    return conv2d(pad_replicate(x, 1), spec)


# %% ---- 2025-03-15 ------------------------
# Play ground
if __name__ == '__main__':
    image = Tensor(np.arange(12.0).reshape(1, 3, 4))
    logger.info(bilinear_resize(image, 2).data)


# %% ---- 2025-03-15 ------------------------
# Pending
