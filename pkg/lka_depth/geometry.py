"""
File: geometry.py
Author: Chuncheng Zhang
Date: 2025-03-18
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The pose network and the differentiable view synthesis.

    The relative pose T maps the target camera points into the source camera,
        P_src = R @ P_tgt + t,
    so the source image sampled at project(backproject(depth_tgt), T)
    reconstructs the target view.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-18 ------------------------
# Requirements and constants
import numpy as np

from pathlib import Path
from dataclasses import dataclass
from loguru import logger

from .errors import ShapeError, DomainError, FormatError
from .tensor import (Tensor, as_tensor, matmul, reshape, transpose, stack,
                     concat, reduce, getitem, sqrt, sin, cos, clamp, square)
from .nn_ops import ConvSpec, SampleGrid, conv2d, activation, grid_sample
from .depth_net import layer_rng

POSE_SCALE = 0.01
MIN_Z = 1e-3
SMALL_ANGLE = 1e-8


# %% ---- 2025-03-18 ------------------------
# Function and class
@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.width, self.height = int(self.width), int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f'Focal lengths must be positive, got {self.fx}, {self.fy}')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError(
                f'Principal point ({self.cx}, {self.cy}) is outside {self.width}x{self.height}')

    def cropped(self, top: int, left: int, height: int, width: int):
        '''The intrinsics of the crop window.'''
        return CameraModel(self.fx, self.fy, self.cx - left, self.cy - top, width, height)

    def pixel_rays(self) -> np.ndarray:
        '''[3, H, W] rays ((j - cx) / fx, (i - cy) / fy, 1).'''
        jj, ii = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack([(jj - self.cx) / self.fx,
                         (ii - self.cy) / self.fy,
                         np.ones((self.height, self.width))])

    def to_line(self) -> str:
        return ' '.join(repr(float(v)) for v in (self.fx, self.fy, self.cx, self.cy)) \
            + f' {self.width} {self.height}'


def load_intrinsics(path) -> CameraModel:
    '''Read "fx fy cx cy W H" from the single-line text file.'''
    path = Path(path)
    try:
        values = path.read_text().split()
    except OSError as err:
        raise FormatError(f'Can not read {path}: {err}')
    if len(values) != 6:
        raise FormatError(f'{path} needs 6 numbers (fx fy cx cy W H), got {len(values)}')
    try:
        fx, fy, cx, cy = (float(v) for v in values[:4])
        width, height = (int(v) for v in values[4:])
    except ValueError as err:
        raise FormatError(f'{path}: {err}')
    return CameraModel(fx, fy, cx, cy, width, height)


def save_intrinsics(path, cam: CameraModel):
    path = Path(path)
    path.write_text(cam.to_line() + '\n')
    return path


@dataclass
class RigidTransform:
    '''Rotation [3, 3] and translation [3] in meters, both Tensors.'''
    rotation: Tensor
    translation: Tensor

    def __post_init__(self):
        self.rotation = as_tensor(self.rotation)
        self.translation = as_tensor(self.translation)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ShapeError(
                f'Bad transform shapes {self.rotation.shape}, {self.translation.shape}')

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, tol: float = 1e-9):
        '''From the 3x4 [R | t] matrix, the rotation is checked.'''
        m = np.asarray(m, dtype=np.float64).reshape(3, 4)
        T = cls(m[:, :3], m[:, 3])
        T.check(tol)
        return T

    def matrix(self) -> np.ndarray:
        return np.concatenate([self.rotation.data, self.translation.data[:, None]], axis=1)

    def check(self, tol: float = 1e-9):
        R = self.rotation.data
        if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1) > tol:
            raise DomainError('Rotation is not orthonormal with det +1')
        return self

    def inverse(self):
        '''(R^T, -R^T t)'''
        Rt = transpose(self.rotation, (1, 0))
        t = matmul(Rt, reshape(self.translation, (3, 1)))
        return RigidTransform(Rt, reshape(t, (3,)) * -1.0)

    def compose(self, other):
        '''self after other, x -> R1 (R2 x + t2) + t1.'''
        R = matmul(self.rotation, other.rotation)
        t = matmul(self.rotation, reshape(other.translation, (3, 1)))
        return RigidTransform(R, reshape(t, (3,)) + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        '''Transform [3, ...] points, no gradient.'''
        shape = points.shape
        out = self.rotation.data @ points.reshape(3, -1) + self.translation.data[:, None]
        return out.reshape(shape)


def relative_transform(target_to_world: RigidTransform, source_to_world: RigidTransform):
    '''The transform mapping the target camera points into the source camera.'''
    return source_to_world.inverse().compose(target_to_world)


def load_poses(path) -> list:
    '''One 3x4 row-major camera-to-world matrix (12 numbers) per line.'''
    path = Path(path)
    poses = []
    try:
        lines = path.read_text().splitlines()
    except OSError as err:
        raise FormatError(f'Can not read {path}: {err}')
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError as err:
            raise FormatError(f'{path}:{n + 1}: {err}')
        if len(values) != 12:
            raise FormatError(f'{path}:{n + 1}: expect 12 numbers, got {len(values)}')
        poses.append(RigidTransform.from_matrix(values, tol=1e-6))
    return poses


def save_poses(path, poses: list):
    path = Path(path)
    lines = [' '.join(repr(float(v)) for v in T.matrix().ravel()) for T in poses]
    path.write_text('\n'.join(lines) + '\n')
    return path


def _skew(w: Tensor) -> Tensor:
    '''[w]x of the 3-vector.'''
    zero = Tensor(0.0)
    w0, w1, w2 = getitem(w, 0), getitem(w, 1), getitem(w, 2)
    return stack([stack([zero, w2 * -1.0, w1]),
                  stack([w2, zero, w0 * -1.0]),
                  stack([w1 * -1.0, w0, zero])])


def se3_exp(axis_angle, translation) -> RigidTransform:
    '''
    Exponential map of the 6-DoF pose.

    R = I + sin(t)/t [w]x + (1 - cos(t))/t^2 [w]x^2, t = |w|,
    the small angles (t < 1e-8) use I + [w]x.

    :param axis_angle: Tensor [3], the rotation vector in radians.
    :param translation: Tensor [3], copied.

    :return: the RigidTransform.
    '''
    w = as_tensor(axis_angle)
    translation = as_tensor(translation)
    if w.shape != (3,) or translation.shape != (3,):
        raise ShapeError(f'Pose vectors must be [3], got {w.shape}, {translation.shape}')

    K = _skew(w)
    eye = Tensor(np.eye(3))
    theta2 = reduce(square(w), 'sum')
    if np.sqrt(theta2.item()) < SMALL_ANGLE:
        return RigidTransform(eye + K, translation)

    theta = sqrt(theta2)
    a = sin(theta) / theta
    b = (1.0 - cos(theta)) / theta2
    R = eye + a * K + b * matmul(K, K)
    return RigidTransform(R, translation)


def backproject(depth, cam: CameraModel) -> Tensor:
    '''
    Lift the depth map into the camera-frame points.

    :param depth: Tensor [1, H, W], meters.
    :param cam: the CameraModel.

    :return: Tensor [3, H, W].
    '''
    depth = as_tensor(depth)
    if depth.shape != (1, cam.height, cam.width):
        raise ShapeError(
            f'Depth {depth.shape} does not match camera {cam.height}x{cam.width}')
    if np.any(depth.data <= 0):
        raise DomainError('Depth must be positive')
    return depth * Tensor(cam.pixel_rays())


def project(points, cam: CameraModel, T: RigidTransform) -> SampleGrid:
    '''
    Transform the points by T and project them into the pixel grid.

    x = fx * X / Z + cx, y = fy * Y / Z + cy, Z is clamped below at 1e-3 m.

    :param points: Tensor [3, H, W].
    :param cam: the CameraModel.
    :param T: the RigidTransform.

    :return: the SampleGrid [2, H, W].
    '''
    points = as_tensor(points)
    if points.ndim != 3 or points.shape[0] != 3:
        raise ShapeError(f'Points must be [3, H, W], got {points.shape}')
    _, H, W = points.shape
    P = matmul(T.rotation, reshape(points, (3, H * W))) + reshape(T.translation, (3, 1))
    z = clamp(getitem(P, 2), lo=MIN_Z)
    x = getitem(P, 0) / z * cam.fx + cam.cx
    y = getitem(P, 1) / z * cam.fy + cam.cy
    return SampleGrid(reshape(stack([x, y]), (2, H, W)))


def warp(source, grid: SampleGrid) -> Tensor:
    '''Sample the source [3, H, W] at the grid, border-clamped bilinear.'''
    return grid_sample(source, grid)


class PoseNet(object):
    '''
    The scratch pose network.

    6-channel input, 5 stride-2 conv3x3 + ELU stages,
    global mean pool and the 1x1 projection to 6 values.
    '''
    pose_channels: tuple = (16, 32, 64, 64, 64)
    seed: int = 0

    def __init__(self, **kwargs):
        for k, v in kwargs.items():
            if not hasattr(self, k):
                logger.warning(f'Invalid PoseNet option: {k}')
                continue
            setattr(self, k, v)
        self.pose_channels = tuple(int(c) for c in self.pose_channels)
        self.build()

    @classmethod
    def from_config(cls, cfg):
        return cls(pose_channels=tuple(cfg.pose_channels), seed=cfg.seed)

    def build(self):
        self.convs = []
        in_c = 6
        for s, c in enumerate(self.pose_channels, start=1):
            self.convs.append(ConvSpec.create(
                in_c, c, 3, layer_rng(self.seed, f'pose.{s}'), stride=2, padding=1))
            in_c = c
        self.head = ConvSpec.create(in_c, 6, 1, layer_rng(self.seed, 'pose.head'))
        return self

    def named_parameters(self) -> dict:
        named = {}
        for s, spec in enumerate(self.convs, start=1):
            named[f'pose.{s}.weight'], named[f'pose.{s}.bias'] = spec.parameters()
        named['pose.head.weight'], named['pose.head.bias'] = self.head.parameters()
        return named

    def parameters(self):
        return list(self.named_parameters().values())

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def forward(self, target, source):
        return pose_forward(target, source, self)


def pose_forward(target, source, net: PoseNet):
    '''
    Predict the relative pose of the source w.r.t. the target.

    :param target: Tensor [3, H, W].
    :param source: Tensor [3, H, W].
    :param net: the PoseNet.

    :return: (axis_angle [3], translation [3]), both scaled by 0.01.
    '''
    target, source = as_tensor(target), as_tensor(source)
    if target.shape != source.shape or target.ndim != 3 or target.shape[0] != 3:
        raise ShapeError(f'Pose inputs must be matching [3, H, W], '
                         f'got {target.shape} and {source.shape}')
    x = concat([target, source], axis=0)
    for spec in net.convs:
        x = activation(conv2d(x, spec), 'elu')
    pooled = reduce(reduce(x, 'mean', axis=2, keepdims=True), 'mean', axis=1, keepdims=True)
    out = reshape(conv2d(pooled, net.head), (6,)) * POSE_SCALE
    return getitem(out, slice(0, 3)), getitem(out, slice(3, 6))


# %% ---- 2025-03-18 ------------------------
# Play ground
if __name__ == '__main__':
    T = se3_exp(Tensor([0, 0, np.pi / 2]), Tensor([0.0, 0.0, 0.0]))
    logger.info(T.apply(np.array([1.0, 0.0, 0.0])))


# %% ---- 2025-03-18 ------------------------
# Pending
