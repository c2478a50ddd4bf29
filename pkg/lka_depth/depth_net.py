"""
File: depth_net.py
Author: Chuncheng Zhang
Date: 2025-03-17
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The depth network, a small 4-level encoder and the LKA decoder.

    Decoder, for s = 3, 2, 1:
        x_s = LKA(concat(conv3x3(feats[s]), up(x_{s+1})))
        disp_s = sigmoid(conv3x3(x_s))
    and disp_0 = sigmoid(conv3x3(up(x_1))) at the input resolution.

    use_lka=False replaces LKA by the depthwise conv3x3 + ELU,
    use_offset_upsampler=False replaces the offset upsampler by bilinear 2x.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-17 ------------------------
# Requirements and constants
import zlib
import numpy as np

from dataclasses import dataclass
from loguru import logger

from .errors import ShapeError
from .tensor import Tensor, as_tensor, no_grad
from .nn_ops import (ConvSpec, conv2d, activation, concat_channels,
                     bilinear_resize, count_macs)
from .lka import LkaParams, lka_forward
from .upsampler import UpsamplerParams, offset_upsample

LEVELS = 4


def layer_rng(seed: int, name: str) -> np.random.Generator:
    '''Independent generator per layer, the ablations keep the shared layers identical.'''
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# %% ---- 2025-03-17 ------------------------
# Function and class
@dataclass
class MultiScaleFeatures:
    '''levels[s - 1] is [C_s, H / 2^s, W / 2^s] for s = 1..4.'''
    levels: list


@dataclass
class DisparityPyramid:
    '''disps[s] is [1, H / 2^s, W / 2^s] for s = 0..3, values in (0, 1).'''
    disps: list


class DepthNet(object):
    '''
    The parameters of the depth network.

    The layers are created in a fixed order with per-layer generators,
    so the same seed always gives the same weights.
    '''
    channels: tuple = (16, 32, 64, 128)
    use_lka: bool = True
    use_offset_upsampler: bool = True
    lka_dw_kernel: int = 5
    lka_dwd_kernel: int = 7
    lka_dwd_dilation: int = 3
    seed: int = 0

    def __init__(self, **kwargs):
        for k, v in kwargs.items():
            if not hasattr(self, k):
                logger.warning(f'Invalid DepthNet option: {k}')
                continue
            setattr(self, k, v)
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != LEVELS:
            raise ShapeError(f'Channel plan needs {LEVELS} levels, got {self.channels}')
        self.build()
        logger.debug(
            f'Built DepthNet channels={self.channels}, lka={self.use_lka}, '
            f'upsampler={self.use_offset_upsampler}, params={self.param_count()}')

    @classmethod
    def from_config(cls, cfg):
        return cls(channels=tuple(cfg.channels),
                   use_lka=cfg.use_lka,
                   use_offset_upsampler=cfg.use_offset_upsampler,
                   lka_dw_kernel=cfg.lka_dw_kernel,
                   lka_dwd_kernel=cfg.lka_dwd_kernel,
                   lka_dwd_dilation=cfg.lka_dwd_dilation,
                   seed=cfg.seed)

    def decoder_widths(self):
        '''Channel width of x_s, s = 1..4.'''
        widths = {LEVELS: self.channels[-1]}
        for s in range(LEVELS - 1, 0, -1):
            widths[s] = self.channels[s - 1] + widths[s + 1]
        return widths

    def build(self):
        seed = self.seed
        C = self.channels

        # Encoder, stride-2 conv3x3 + ELU + conv3x3 + ELU per level.
        self.encoder = []
        in_c = 3
        for s in range(1, LEVELS + 1):
            a = ConvSpec.create(in_c, C[s - 1], 3, layer_rng(seed, f'encoder.{s}.a'),
                                stride=2, padding=1)
            b = ConvSpec.create(C[s - 1], C[s - 1], 3, layer_rng(seed, f'encoder.{s}.b'))
            self.encoder.append((a, b))
            in_c = C[s - 1]

        widths = self.decoder_widths()
        self.fuse, self.attend, self.up, self.heads = {}, {}, {}, {}
        for s in range(LEVELS - 1, 0, -1):
            self.fuse[s] = ConvSpec.create(C[s - 1], C[s - 1], 3,
                                           layer_rng(seed, f'decoder.fuse.{s}'))
            if self.use_lka:
                self.attend[s] = LkaParams.create(
                    widths[s], layer_rng(seed, f'decoder.lka.{s}'),
                    dw_kernel=self.lka_dw_kernel, dwd_kernel=self.lka_dwd_kernel,
                    dwd_dilation=self.lka_dwd_dilation)
            else:
                self.attend[s] = ConvSpec.create(widths[s], widths[s], 3,
                                                 layer_rng(seed, f'decoder.conv.{s}'),
                                                 groups=widths[s])
            self.heads[s] = ConvSpec.create(widths[s], 1, 3,
                                            layer_rng(seed, f'decoder.head.{s}'))

        # up[s] doubles x_{s+1} into scale s, s = 0 is the final upsampling of x_1.
        for s in range(LEVELS - 1, -1, -1):
            if self.use_offset_upsampler:
                self.up[s] = UpsamplerParams.create(widths[s + 1])
        self.heads[0] = ConvSpec.create(widths[1], 1, 3, layer_rng(seed, 'decoder.head.0'))
        return self

    def named_parameters(self) -> dict:
        '''Ordered {name: Tensor} of every trainable tensor.'''
        named = {}

        def put(prefix, params):
            for p, suffix in zip(params, ('weight', 'bias')):
                named[f'{prefix}.{suffix}'] = p

        for s, (a, b) in enumerate(self.encoder, start=1):
            put(f'encoder.{s}.a', a.parameters())
            put(f'encoder.{s}.b', b.parameters())
        for s in sorted(self.fuse, reverse=True):
            put(f'decoder.fuse.{s}', self.fuse[s].parameters())
            block = self.attend[s]
            if isinstance(block, LkaParams):
                put(f'decoder.lka.{s}.dw', block.dw.parameters())
                put(f'decoder.lka.{s}.dwd', block.dwd.parameters())
                put(f'decoder.lka.{s}.pw', block.pw.parameters())
            else:
                put(f'decoder.conv.{s}', block.parameters())
        for s in sorted(self.up, reverse=True):
            put(f'decoder.up.{s}', self.up[s].parameters())
        for s in sorted(self.heads, reverse=True):
            put(f'decoder.head.{s}', self.heads[s].parameters())
        return named

    def parameters(self):
        return list(self.named_parameters().values())

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def param_report(self) -> dict:
        '''Parameter tallies per component, the keys add up to 'total'.'''
        report = dict(
            encoder=sum(a.param_count() + b.param_count() for a, b in self.encoder),
            fuse=sum(c.param_count() for c in self.fuse.values()),
            lka=sum(b.param_count() for b in self.attend.values()
                    if isinstance(b, LkaParams)),
            conv_replacement=sum(b.param_count() for b in self.attend.values()
                                 if isinstance(b, ConvSpec)),
            upsampler=sum(u.param_count() for u in self.up.values()),
            heads=sum(h.param_count() for h in self.heads.values()),
        )
        report['total'] = sum(report.values())
        return report

    def mac_count(self, height: int, width: int) -> int:
        '''Analytic multiply-accumulates of one forward at height x width.'''
        with no_grad(), count_macs() as tally:
            self.forward(Tensor(np.zeros((3, height, width))))
        return int(tally['total'])

    def upsample(self, x: Tensor, s: int) -> Tensor:
        if self.use_offset_upsampler:
            return offset_upsample(x, self.up[s])
        return bilinear_resize(x, 2)

    def forward(self, image: Tensor) -> DisparityPyramid:
        return decoder_forward(encoder_forward(image, self), self)


def encoder_forward(image: Tensor, net: DepthNet) -> MultiScaleFeatures:
    '''
    Multi-scale features of the [3, H, W] image.

    :param image: the image, H and W divisible by 16.
    :param net: the DepthNet parameters.

    :return: 4 levels, level s is [C_s, H / 2^s, W / 2^s].
    '''
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f'Image must be [3, H, W], got {image.shape}')
    _, H, W = image.shape
    if H % 16 or W % 16:
        raise ShapeError(f'Image extents {H}x{W} must be divisible by 16')

    levels = []
    x = image
    for a, b in net.encoder:
        x = activation(conv2d(x, a), 'elu')
        x = activation(conv2d(x, b), 'elu')
        levels.append(x)
    return MultiScaleFeatures(levels)


def decoder_forward(feats: MultiScaleFeatures, net: DepthNet) -> DisparityPyramid:
    '''
    The LKA decoder.

    :param feats: the encoder features.
    :param net: the DepthNet parameters.

    :return: the disparity pyramid, 4 scales.
    '''
    if len(feats.levels) != LEVELS:
        raise ShapeError(f'Decoder expects {LEVELS} levels, got {len(feats.levels)}')

    disps = [None] * LEVELS
    x = feats.levels[-1]
    for s in range(LEVELS - 1, 0, -1):
        skip = conv2d(feats.levels[s - 1], net.fuse[s])
        x = concat_channels(skip, net.upsample(x, s))
        block = net.attend[s]
        if isinstance(block, LkaParams):
            x = lka_forward(x, block)
        else:
            x = activation(conv2d(x, block), 'elu')
        disps[s] = activation(conv2d(x, net.heads[s]), 'sigmoid')

    x = net.upsample(x, 0)
    disps[0] = activation(conv2d(x, net.heads[0]), 'sigmoid')
    return DisparityPyramid(disps)


def disp_to_depth(disp, min_depth: float = 0.1, max_depth: float = 100.0) -> Tensor:
    '''
    Convert the sigmoid disparity into depth in meters.

    depth = 1 / (1/max_depth + (1/min_depth - 1/max_depth) * disp)
    '''
    disp = as_tensor(disp)
    min_disp = 1.0 / max_depth
    max_disp = 1.0 / min_depth
    return 1.0 / (min_disp + (max_disp - min_disp) * disp)


# %% ---- 2025-03-17 ------------------------
# Play ground
if __name__ == '__main__':
    net = DepthNet(channels=(4, 8, 8, 8))
    logger.info(net.param_report())
    logger.info(f'MACs at 64x192: {net.mac_count(64, 192)}')


# %% ---- 2025-03-17 ------------------------
# Pending
