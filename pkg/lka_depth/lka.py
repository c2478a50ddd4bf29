"""
File: lka.py
Author: Chuncheng Zhang
Date: 2025-03-16
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The large kernel attention block.

    attention = pw(dwd(dw(f_in)))
    f_out = attention * f_in

    dw is the depthwise conv (5x5), dwd the dilated depthwise conv (7x7, dilation 3)
    and pw the 1x1 conv mixing the channels.
    There is no nonlinearity between the three stages and no residual.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
"""


# %% ---- 2025-03-16 ------------------------
# Requirements and constants
import numpy as np

from dataclasses import dataclass
from loguru import logger

from .errors import ShapeError, ContractError
from .tensor import Tensor, as_tensor
from .nn_ops import ConvSpec, conv2d


# %% ---- 2025-03-16 ------------------------
# Function and class
@dataclass
class LkaParams:
    dw: ConvSpec
    dwd: ConvSpec
    pw: ConvSpec

    def __post_init__(self):
        C = self.channels
        for name, spec in (('dw', self.dw), ('dwd', self.dwd)):
            if not spec.is_depthwise or spec.out_channels != C:
                raise ShapeError(f'LKA {name} must be depthwise over {C} channels')
            if spec.stride != (1, 1):
                raise ShapeError(f'LKA {name} must have stride 1')
            for k, d, p in zip(spec.kernel_size, spec.dilation, spec.padding):
                if d * (k - 1) != 2 * p:
                    raise ShapeError(
                        f'LKA {name} padding {spec.padding} does not keep the extents')
        if self.pw.kernel_size != (1, 1) or self.pw.groups != 1 \
                or self.pw.in_channels != C or self.pw.out_channels != C:
            raise ShapeError(f'LKA pw must be 1x1 over {C} channels')

    @property
    def channels(self):
        return self.dw.out_channels

    def parameters(self):
        return self.dw.parameters() + self.dwd.parameters() + self.pw.parameters()

    def param_count(self):
        return sum(p.size for p in self.parameters())

    @property
    def effective_size(self):
        '''Spatial extent of the composed kernel.'''
        kdw = self.dw.dilation[0] * (self.dw.kernel_size[0] - 1) + 1
        kdwd = self.dwd.dilation[0] * (self.dwd.kernel_size[0] - 1) + 1
        return kdw + kdwd - 1

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator = None,
               dw_kernel: int = 5, dwd_kernel: int = 7, dwd_dilation: int = 3,
               bias: bool = True):
        rng = rng or np.random.default_rng(0)
        return cls(
            dw=ConvSpec.create(channels, channels, dw_kernel, rng,
                               groups=channels, bias=bias),
            dwd=ConvSpec.create(channels, channels, dwd_kernel, rng,
                                dilation=dwd_dilation, groups=channels, bias=bias),
            pw=ConvSpec.create(channels, channels, 1, rng, bias=bias))


def lka_attention(f_in: Tensor, params: LkaParams) -> Tensor:
    '''The attention map pw(dwd(dw(f_in))).'''
    f_in = as_tensor(f_in)
    if f_in.shape[0] != params.channels:
        raise ShapeError(
            f'LKA expects {params.channels} channels, got {f_in.shape[0]}')
    return conv2d(conv2d(conv2d(f_in, params.dw), params.dwd), params.pw)


def lka_forward(f_in: Tensor, params: LkaParams) -> Tensor:
    '''
    The LKA block, attention * f_in.

    :param f_in: [C, H, W].
    :param params: LkaParams over C channels.

    :return: [C, H, W].
    '''
    f_in = as_tensor(f_in)
    return lka_attention(f_in, params) * f_in


def lka_effective_kernel(params: LkaParams, bias_free: bool = True) -> Tensor:
    '''
    Compose pw o dwd o dw into one dense kernel [C, C, S, S].

    The dilated dwd taps are placed every dilation pixels and convolved with the
    dw taps of the same channel, then the channels are mixed by pw.
    With the default 5x5 + 7x7 (dilation 3) the size is S = 5 + 18 = 23,
    and conv2d with padding (S - 1) / 2 reproduces the attention map
    wherever the cascade's zero padding does not cut the intermediate map.

    :param params: the LKA parameters, every bias absent or zero.
    :param bias_free: the linear part only, False is not composable.

    :return: the composed kernel.
    '''
    if not bias_free:
        raise ContractError('The effective kernel is defined for the linear part only')
    for key, spec in (('dw', params.dw), ('dwd', params.dwd), ('pw', params.pw)):
        if spec.bias is not None and np.any(spec.bias.data != 0):
            raise ContractError(
                f'The effective kernel is defined for bias-free params only, {key} has a bias')

    C = params.channels
    S = params.effective_size
    dw = params.dw.weight.data[:, 0]
    dwd = params.dwd.weight.data[:, 0]
    d1, d2 = params.dw.dilation[0], params.dwd.dilation[0]
    k1, k2 = dw.shape[-1], dwd.shape[-1]

    spatial = np.zeros((C, S, S))
    for by in range(k2):
        for bx in range(k2):
            oy, ox = d2 * by, d2 * bx
            spatial[:, oy:oy + d1 * (k1 - 1) + 1:d1, ox:ox + d1 * (k1 - 1) + 1:d1] += \
                dwd[:, by, bx, None, None] * dw

    pw = params.pw.weight.data[:, :, 0, 0]
    kernel = pw[:, :, None, None] * spatial[None]
    logger.debug(f'Composed LKA kernel {kernel.shape}')
    return Tensor(kernel)


def effective_kernel_spec(params: LkaParams) -> ConvSpec:
    '''The single conv equivalent to the bias-free attention path.'''
    kernel = lka_effective_kernel(params)
    pad = (params.effective_size - 1) // 2
    return ConvSpec(weight=kernel, padding=pad)


# %% ---- 2025-03-16 ------------------------
# Play ground
if __name__ == '__main__':
    p = LkaParams.create(4, bias=False)
    logger.info(f'Effective kernel {lka_effective_kernel(p).shape}')
