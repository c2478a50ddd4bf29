"""
File: upsampler.py
Author: Chuncheng Zhang
Date: 2025-03-16
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The learned offset upsampler, 2x.

    O = PixelShuffle(0.25 * Linear(F_in)) + G
    F_out = GridSample(F_in, O)

    Linear is the 1x1 conv from C to 2*r*r = 8 channels,
    G the half-pixel grid of the 2x output in source pixels.
    The projection starts at zero, so the untrained module is exactly bilinear.

Functions:
    1. Requirements and constants
    2. Function and class
"""


# %% ---- 2025-03-16 ------------------------
# Requirements and constants
import numpy as np

from dataclasses import dataclass

from .errors import ShapeError
from .tensor import Tensor, as_tensor
from .nn_ops import (ConvSpec, SampleGrid, conv2d, pixel_shuffle, grid_sample,
                     half_pixel_coords)

RATIO = 2
DAMPING = 0.25


# %% ---- 2025-03-16 ------------------------
# Function and class
@dataclass
class UpsamplerParams:
    offset_proj: ConvSpec

    def __post_init__(self):
        if self.offset_proj.kernel_size != (1, 1) \
                or self.offset_proj.out_channels != 2 * RATIO * RATIO:
            raise ShapeError(
                f'offset_proj must be 1x1 with {2 * RATIO * RATIO} outputs')

    @property
    def channels(self):
        return self.offset_proj.in_channels

    def parameters(self):
        return self.offset_proj.parameters()

    def param_count(self):
        return self.offset_proj.param_count()

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator = None, zero: bool = True):
        return cls(offset_proj=ConvSpec.create(
            channels, 2 * RATIO * RATIO, 1, rng, zero=zero))


def make_identity_grid(h: int, w: int, scale: int) -> SampleGrid:
    '''
    The half-pixel grid [2, scale*h, scale*w] into the h x w source.

    x = (j + 0.5) / scale - 0.5, y = (i + 0.5) / scale - 0.5
    '''
    return SampleGrid(Tensor(half_pixel_coords(h, w, scale)))


def offset_grid(f_in: Tensor, params: UpsamplerParams) -> SampleGrid:
    '''The sampling positions O of the 2x output.'''
    f_in = as_tensor(f_in)
    if f_in.ndim != 3 or f_in.shape[0] != params.channels:
        raise ShapeError(
            f'Upsampler expects {params.channels} channels, got {f_in.shape}')
    _, H, W = f_in.shape
    offsets = pixel_shuffle(conv2d(f_in, params.offset_proj) * DAMPING, RATIO)
    return SampleGrid(offsets + make_identity_grid(H, W, RATIO).coords)


def offset_upsample(f_in: Tensor, params: UpsamplerParams) -> Tensor:
    '''
    Resample [C, H, W] into [C, 2H, 2W] at the learned offsets.

    :param f_in: the features.
    :param params: the UpsamplerParams.

    :return: the upsampled features.
    '''
    return grid_sample(f_in, offset_grid(f_in, params))
