"""
File: synthetic_scene.py
Author: Chuncheng Zhang
Date: 2025-03-21
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    Analytic scene generator, the image sequences with exact depth and poses.

    World frame is the camera frame of the first pose: x right, y down, z forward.
    The ground plane is y = +1.5 (the camera stands 1.5 m above it),
    the boxes are axis-aligned, the color is a smooth 3-D sinusoid texture.

    Dataset directory:
        frame_%04d.ppm   binary P6, 8-bit
        depth_%04d.lkdt  [1, H, W] float64 meters
        intrinsics.txt   fx fy cx cy W H
        poses.txt        one 3x4 camera-to-world matrix per line
        README.md

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-21 ------------------------
# Requirements and constants
import numpy as np

from pathlib import Path
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor
from tqdm.auto import tqdm
from loguru import logger

from .errors import DomainError, ContractError
from .tensor import Tensor
from .geometry import CameraModel, RigidTransform, se3_exp, save_intrinsics, save_poses
from .serialization import save_lkdt
from .dataset import write_ppm

FAR_DEPTH = 100.0
MIN_SURFACE_Z = 0.5
GROUND_Y = 1.5
SKY_COLOR = (0.62, 0.70, 0.80)

README = '''# Synthetic sequence

| File | Content |
| ---- | ------- |
| `frame_%04d.ppm` | RGB frame, binary P6, 8-bit |
| `depth_%04d.lkdt` | ground truth depth [1, H, W], float64 meters, LKDT container |
| `intrinsics.txt` | `fx fy cx cy W H` on one line |
| `poses.txt` | camera-to-world 3x4 row-major matrix per line, one line per frame |

The world frame is the camera frame of frame 0 (x right, y down, z forward).
Rays missing every surface are assigned {far} m and the background color.
'''


# %% ---- 2025-03-21 ------------------------
# Function and class
@dataclass
class TextureSpec:
    '''color_c(X) = 0.5 + sum_k amplitude_k * sin(frequency_k . X + phase_kc)'''
    frequencies: np.ndarray
    phases: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64).reshape(-1, 3)
        self.phases = np.asarray(self.phases, dtype=np.float64).reshape(-1, 3)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        if np.abs(self.amplitudes).sum() > 0.5:
            raise DomainError('Texture amplitudes must sum to at most 0.5')

    @classmethod
    def random(cls, rng: np.random.Generator, n: int = 3,
               wavelengths: tuple = (2.5, 6.0), amplitude: float = 0.15):
        directions = rng.normal(size=(n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        wavelength = rng.uniform(*wavelengths, size=(n, 1))
        return cls(frequencies=directions * 2 * np.pi / wavelength,
                   phases=rng.uniform(0, 2 * np.pi, size=(n, 3)),
                   amplitudes=np.full(n, amplitude))

    def color(self, points: np.ndarray) -> np.ndarray:
        '''[3, N] world points into [3, N] colors in [0, 1].'''
        arg = self.frequencies @ points
        out = np.full((3, points.shape[1]), 0.5)
        for c in range(3):
            out[c] += (self.amplitudes[:, None] * np.sin(arg + self.phases[:, c:c + 1])).sum(axis=0)
        return np.clip(out, 0, 1)


@dataclass
class SceneSpec:
    cam: CameraModel
    trajectory: list
    boxes: list
    texture: TextureSpec
    noise_sigma: float = 0.0
    seed: int = 0
    ground_y: float = GROUND_Y

    def __post_init__(self):
        if len(self.trajectory) < 3:
            raise ContractError(f'Trajectory needs at least 3 poses, got {len(self.trajectory)}')
        if not 1 <= len(self.boxes) <= 3:
            raise ContractError(f'The layout holds 1 to 3 boxes, got {len(self.boxes)}')
        if self.noise_sigma < 0:
            raise DomainError('noise_sigma must be nonnegative')
        self.boxes = [(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))
                      for lo, hi in self.boxes]
        for lo, hi in self.boxes:
            if np.any(hi <= lo):
                raise DomainError(f'Empty box {lo} {hi}')

    def __len__(self):
        return len(self.trajectory)


def default_camera(width: int, height: int) -> CameraModel:
    '''The KITTI-like normalized intrinsics at the resolution.'''
    return CameraModel(fx=0.58 * width, fy=1.92 * height,
                       cx=0.5 * width, cy=0.5 * height, width=width, height=height)


def default_trajectory(n_frames: int, forward: float = 0.4, lateral: float = 0.1,
                       yaw: float = 0.005) -> list:
    '''Lateral + forward motion with the small yaw, camera-to-world.'''
    trajectory = []
    for k in range(n_frames):
        T = se3_exp(Tensor([0.0, yaw * k, 0.0]), Tensor([lateral * k, 0.0, forward * k]))
        trajectory.append(RigidTransform(T.rotation.data, T.translation.data))
    return trajectory


def default_scene(width: int = 192, height: int = 64, n_frames: int = 10,
                  seed: int = 0, noise_sigma: float = 0.0, n_boxes: int = 2) -> SceneSpec:
    '''
    The default scene, the boxes stand ahead of the last camera position.

    :param width, height: the image size.
    :param n_frames: the trajectory length.
    :param seed: the seed of the layout, the texture and the noise.
    :param noise_sigma: the Gaussian pixel noise.
    :param n_boxes: 1 to 3.
    '''
    rng = np.random.default_rng(seed)
    trajectory = default_trajectory(n_frames)
    z0 = trajectory[-1].translation.data[2] + 6.0
    boxes = []
    for _ in range(n_boxes):
        size = rng.uniform([1.0, 1.0, 1.0], [2.5, 2.0, 2.5])
        x = rng.uniform(-4.0, 4.0)
        z = z0 + rng.uniform(0.0, 12.0)
        lo = np.array([x - size[0] / 2, GROUND_Y - size[1], z])
        boxes.append((lo, lo + size))
    return SceneSpec(cam=default_camera(width, height), trajectory=trajectory,
                     boxes=boxes, texture=TextureSpec.random(rng),
                     noise_sigma=noise_sigma, seed=seed)


def _ray_box(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    '''Slab intersection, the entry parameter or inf for the misses.'''
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / dirs
        t1 = (lo[:, None] - origin[:, None]) * inv
        t2 = (hi[:, None] - origin[:, None]) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    t_near = np.minimum(t1, t2).max(axis=0)
    t_far = np.maximum(t1, t2).min(axis=0)
    hit = (t_far >= t_near) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def render(spec: SceneSpec, frame_index: int):
    '''
    Ray cast the frame.

    :param spec: the SceneSpec.
    :param frame_index: the trajectory index.

    :return: (image Tensor [3, H, W] in [0, 1], depth Tensor [1, H, W] meters).
    '''
    if not 0 <= frame_index < len(spec.trajectory):
        raise ContractError(f'Frame {frame_index} is outside the trajectory')
    cam = spec.cam
    H, W = cam.height, cam.width
    pose = spec.trajectory[frame_index]
    R, origin = pose.rotation.data, pose.translation.data

    # The camera rays have z = 1, so the ray parameter is the camera depth.
    rays = cam.pixel_rays().reshape(3, -1)
    dirs = R @ rays

    with np.errstate(divide='ignore', invalid='ignore'):
        t_ground = np.where(dirs[1] > 0, (spec.ground_y - origin[1]) / dirs[1], np.inf)
    t_ground = np.where(t_ground > 0, t_ground, np.inf)
    t = t_ground
    for lo, hi in spec.boxes:
        t = np.minimum(t, _ray_box(origin, dirs, lo, hi))

    hit = t <= FAR_DEPTH
    if hit.any() and t[hit].min() < MIN_SURFACE_Z:
        raise DomainError(
            f'Frame {frame_index} sees a surface at z={t[hit].min():.3f} < {MIN_SURFACE_Z}')
    depth = np.where(hit, t, FAR_DEPTH)

    image = np.empty((3, H * W))
    image[:] = np.array(SKY_COLOR)[:, None]
    points = origin[:, None] + dirs[:, hit] * t[hit]
    image[:, hit] = spec.texture.color(points)

    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, frame_index])
        image = np.clip(image + rng.normal(0, spec.noise_sigma, image.shape), 0, 1)

    return Tensor(image.reshape(3, H, W)), Tensor(depth.reshape(1, H, W))


def make_sequence(spec: SceneSpec, out_dir, threads: int = 1) -> Path:
    '''
    Render every frame and write the dataset directory.

    :param spec: the SceneSpec.
    :param out_dir: the directory, created if missing.
    :param threads: the render workers.

    :return: the directory.
    '''
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(spec.trajectory)
    logger.info(f'Rendering {n} frames of {spec.cam.width}x{spec.cam.height} into {out_dir}')

    def job(k):
        image, depth = render(spec, k)
        write_ppm(out_dir.joinpath(f'frame_{k:04d}.ppm'), image)
        save_lkdt(out_dir.joinpath(f'depth_{k:04d}.lkdt'), depth)
        return k

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for _ in tqdm(pool.map(job, range(n)), total=n, desc='Render'):
            pass

    save_intrinsics(out_dir.joinpath('intrinsics.txt'), spec.cam)
    save_poses(out_dir.joinpath('poses.txt'), spec.trajectory)
    out_dir.joinpath('README.md').write_text(README.format(far=FAR_DEPTH))
    return out_dir


# %% ---- 2025-03-21 ------------------------
# Play ground
if __name__ == '__main__':
    spec = default_scene()
    image, depth = render(spec, 0)
    logger.info(f'Depth range {depth.data.min():.2f} .. {depth.data.max():.2f}')


# %% ---- 2025-03-21 ------------------------
# Pending
