"""
File: losses.py
Author: Chuncheng Zhang
Date: 2025-03-19
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The self-supervised objective.

    Photometric error (SSIM + L1), per-pixel minimum over the source frames,
    automask of the static pixels, and the edge-aware disparity smoothness,
    at the 4 disparity scales.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-19 ------------------------
# Requirements and constants
import numpy as np

from dataclasses import dataclass, field
from loguru import logger

from .errors import ShapeError, DomainError, ContractError
from .tensor import (Tensor, as_tensor, reduce, concat, absolute, clamp,
                     getitem, no_grad)
from .nn_ops import box_filter3, bilinear_resize
from .depth_net import disp_to_depth
from .geometry import se3_exp, pose_forward, backproject, project, warp

C1 = 0.01 ** 2
C2 = 0.03 ** 2


# %% ---- 2025-03-19 ------------------------
# Function and class
@dataclass
class LossBreakdown:
    '''
    The loss terms, total == photometric + smoothness_weight * smoothness.

    masked_fraction is the share of the pixels the automask excludes.
    '''
    total: Tensor
    photometric: Tensor
    smoothness: Tensor
    masked_fraction: float
    per_scale: list = field(default_factory=list)

    def as_row(self) -> dict:
        return dict(total=self.total.item(),
                    photometric=self.photometric.item(),
                    smoothness=self.smoothness.item(),
                    masked_fraction=float(self.masked_fraction))


def _check_pair(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f'Shape mismatch {a.shape} vs {b.shape}')


def ssim(a, b) -> Tensor:
    '''
    Local SSIM with the 3x3 replicate-padded windows.

    :param a: Tensor [C, H, W] in [0, 1].
    :param b: Tensor [C, H, W] in [0, 1].

    :return: Tensor [C, H, W].
    '''
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b)
    mu_a = box_filter3(a)
    mu_b = box_filter3(b)
    sigma_a = box_filter3(a * a) - mu_a * mu_a
    sigma_b = box_filter3(b * b) - mu_b * mu_b
    sigma_ab = box_filter3(a * b) - mu_a * mu_b

    n = (2 * mu_a * mu_b + C1) * (2 * sigma_ab + C2)
    d = (mu_a * mu_a + mu_b * mu_b + C1) * (sigma_a + sigma_b + C2)
    return n / d


def photometric_error(pred, target, ssim_weight: float = 0.85) -> Tensor:
    '''
    pe = w * clamp((1 - ssim) / 2, 0, 1) + (1 - w) * |pred - target|, channel-averaged.

    :return: Tensor [1, H, W].
    '''
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target)
    l1 = reduce(absolute(pred - target), 'mean', axis=0, keepdims=True)
    dssim = clamp((1.0 - ssim(pred, target)) * 0.5, 0.0, 1.0)
    dssim = reduce(dssim, 'mean', axis=0, keepdims=True)
    return dssim * ssim_weight + l1 * (1.0 - ssim_weight)


def min_reprojection_with_automask(pe_warped: list, pe_identity: list,
                                   jitter: float = 1e-5):
    '''
    Per-pixel minimum reprojection with the automask.

    mask = 1 where min(warped) + jitter < min(identity),
    the exact ties go to the identity, the pixel is masked out.

    :param pe_warped: list of Tensor [1, H, W], the errors of the warped sources.
    :param pe_identity: list of Tensor [1, H, W], the errors of the unwarped sources.
    :param jitter: the tie-break margin.

    :return: (loss_map, mask), both [1, H, W], loss_map is zero where mask is 0.
    '''
    if not pe_warped or not pe_identity:
        raise ContractError('At least one source frame is required')
    shapes = {tuple(t.shape) for t in list(pe_warped) + list(pe_identity)}
    if len(shapes) != 1:
        raise ShapeError(f'Error maps must share the shape, got {shapes}')

    warped_min = reduce(concat(pe_warped, axis=0), 'min_over_axis', axis=0, keepdims=True)
    identity_min = np.min(np.concatenate([as_tensor(t).data for t in pe_identity]),
                          axis=0, keepdims=True)
    mask = (warped_min.data + jitter < identity_min).astype(warped_min.data.dtype)
    return warped_min * Tensor(mask), Tensor(mask)


def smoothness(disp, image) -> Tensor:
    '''
    Edge-aware smoothness of the mean-normalized disparity.

    mean(|dx d*| exp(-|dx I|)) + mean(|dy d*| exp(-|dy I|)), d* = disp / mean(disp),
    the image gradients are channel-averaged.

    :param disp: Tensor [1, H, W].
    :param image: Tensor [C, H, W].

    :return: the scalar Tensor.
    '''
    disp, image = as_tensor(disp), as_tensor(image)
    if disp.shape[1:] != image.shape[1:]:
        raise ShapeError(f'Spatial mismatch {disp.shape} vs {image.shape}')
    mean = reduce(disp, 'mean')
    if mean.item() == 0:
        raise DomainError('Mean disparity is zero')
    d = disp / mean

    every = slice(None)
    x_l, x_r = (every, every, slice(None, -1)), (every, every, slice(1, None))
    y_t, y_b = (every, slice(None, -1), every), (every, slice(1, None), every)

    grad_dx = absolute(getitem(d, x_l) - getitem(d, x_r))
    grad_dy = absolute(getitem(d, y_t) - getitem(d, y_b))
    img = image.data
    weight_x = np.exp(-np.abs(img[x_l] - img[x_r]).mean(axis=0, keepdims=True))
    weight_y = np.exp(-np.abs(img[y_t] - img[y_b]).mean(axis=0, keepdims=True))
    return reduce(grad_dx * Tensor(weight_x), 'mean') + reduce(grad_dy * Tensor(weight_y), 'mean')


def downsample_image(image, factor: int) -> Tensor:
    '''Average pooling of the constant image by the integer factor.'''
    img = as_tensor(image).data
    if factor == 1:
        return Tensor(img)
    C, H, W = img.shape
    if H % factor or W % factor:
        raise ShapeError(f'{H}x{W} is not divisible by {factor}')
    return Tensor(img.reshape(C, H // factor, factor, W // factor, factor).mean(axis=(2, 4)))


def sample_loss(target, sources, cam, depth_net, pose_net, ssim_weight: float = 0.85,
                min_depth: float = 0.1, max_depth: float = 100.0, jitter: float = 1e-5):
    '''
    The per-sample loss terms.

    :return: (photometric, smoothness, masked_fraction, per_scale rows).
    '''
    target = as_tensor(target)
    if not sources:
        raise ContractError('At least one source frame is required')
    pyramid = depth_net.forward(target)
    transforms = [se3_exp(*pose_forward(target, src, pose_net)) for src in sources]
    with no_grad():
        pe_identity = [photometric_error(src, target, ssim_weight) for src in sources]

    photo_terms, smooth_terms, masked, rows = [], [], [], []
    for s, disp in enumerate(pyramid.disps):
        full = disp if s == 0 else bilinear_resize(disp, 2 ** s)
        points = backproject(disp_to_depth(full, min_depth, max_depth), cam)
        pe_warped = [photometric_error(warp(src, project(points, cam, T)), target, ssim_weight)
                     for src, T in zip(sources, transforms)]
        loss_map, mask = min_reprojection_with_automask(pe_warped, pe_identity, jitter)
        photo = reduce(loss_map, 'mean')
        smooth = smoothness(disp, downsample_image(target, 2 ** s)) * (1.0 / 2 ** s)
        photo_terms.append(photo)
        smooth_terms.append(smooth)
        masked.append(1.0 - mask.data.mean())
        rows.append(dict(scale=s, photometric=photo.item(), smoothness=smooth.item()))

    photometric = _mean(photo_terms)
    smooth = _mean(smooth_terms)
    return photometric, smooth, float(np.mean(masked)), rows


def _mean(terms: list) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def total_loss(batch, depth_net, pose_net, cams, smoothness_weight: float = 1e-3,
               **kwargs) -> LossBreakdown:
    '''
    The training objective of the batch.

    Every disparity scale is upsampled to the full resolution before the warp,
    the photometric term is the mean over the scales,
    the smoothness term is the mean over the scales of smooth_s / 2^s.

    :param batch: list of (target [3, H, W], list of sources [3, H, W]).
    :param depth_net: the DepthNet.
    :param pose_net: the PoseNet.
    :param cams: list of CameraModel, one per sample.
    :param smoothness_weight: the smoothness weight.
    :param kwargs: ssim_weight, min_depth, max_depth, jitter for sample_loss.

    :return: the LossBreakdown averaged over the batch.
    '''
    if not batch:
        raise ContractError('Empty batch')
    if len(cams) != len(batch):
        raise ShapeError(f'{len(batch)} samples but {len(cams)} cameras')

    photo_terms, smooth_terms, masked, per_scale = [], [], [], []
    for (target, sources), cam in zip(batch, cams):
        photometric, smooth, fraction, rows = sample_loss(
            target, sources, cam, depth_net, pose_net, **kwargs)
        photo_terms.append(photometric)
        smooth_terms.append(smooth)
        masked.append(fraction)
        per_scale.extend(rows)

    photometric = _mean(photo_terms)
    smooth = _mean(smooth_terms)
    total = photometric + smooth * smoothness_weight
    logger.debug(f'Loss total={total.item():.6f}, photometric={photometric.item():.6f}, '
                 f'smoothness={smooth.item():.6f}')
    return LossBreakdown(total, photometric, smooth, float(np.mean(masked)), per_scale)


# %% ---- 2025-03-19 ------------------------
# Play ground
if __name__ == '__main__':
    rng = np.random.default_rng(0)
    a = Tensor(rng.uniform(size=(3, 8, 8)))
    logger.info(f'ssim(a, a) = {reduce(ssim(a, a), "mean").item()}')


# %% ---- 2025-03-19 ------------------------
# Pending
