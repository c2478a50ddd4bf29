"""
File: dataset.py
Author: Chuncheng Zhang
Date: 2025-03-21
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    Image and sequence I/O, and the prefetching batch iterator.

    The batches are assembled on the prefetch thread and handed over
    through the bounded queue, the order is fixed on the calling thread.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-21 ------------------------
# Requirements and constants
import queue
import numpy as np

from PIL import Image
from pathlib import Path
from threading import Thread, Event
from dataclasses import dataclass
from loguru import logger

from .errors import FormatError, ShapeError
from .tensor import Tensor, as_tensor
from .geometry import CameraModel, load_intrinsics, load_poses
from .serialization import load_lkdt

_DONE = object()


# %% ---- 2025-03-21 ------------------------
# Function and class
def read_ppm(path) -> Tensor:
    '''
    Read the 8-bit image as Tensor [3, H, W] in [0, 1].

    :param path: the image file, PPM or anything Pillow reads.
    '''
    path = Path(path)
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert('RGB'), dtype=np.float64)
    except (OSError, ValueError) as err:
        raise FormatError(f'Can not read image {path}: {err}')
    return Tensor(array.transpose(2, 0, 1) / 255.0)


def to_uint8(image) -> np.ndarray:
    '''[3, H, W] in [0, 1] into [H, W, 3] uint8.'''
    data = as_tensor(image).data
    if data.ndim != 3 or data.shape[0] not in (1, 3):
        raise ShapeError(f'Image must be [3, H, W] or [1, H, W], got {data.shape}')
    if data.shape[0] == 1:
        data = np.repeat(data, 3, axis=0)
    return np.round(np.clip(data, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def quantize(image) -> Tensor:
    '''The values the 8-bit file stores.'''
    return Tensor(to_uint8(image).transpose(2, 0, 1) / 255.0)


def write_ppm(path, image):
    '''Write [3, H, W] (or gray [1, H, W]) in [0, 1] as the binary P6 pixmap.'''
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format='PPM')
    return path


def inverse_depth_image(depth) -> Tensor:
    '''Min/max normalized inverse depth [1, H, W], the nearest pixel maps to 1.'''
    inv = 1.0 / as_tensor(depth).data
    lo, hi = inv.min(), inv.max()
    if hi == lo:
        return Tensor(np.zeros_like(inv))
    return Tensor((inv - lo) / (hi - lo))


def center_crop(image, cam: CameraModel = None, multiple: int = 16, size: tuple = None):
    '''
    Crop [C, H, W] around the center, the principal point follows.

    :param image: the image.
    :param cam: the CameraModel, None when there is no camera.
    :param multiple: the cropped extents are divisible by it.
    :param size: (height, width) to crop to, the largest divisible extents when None.

    :return: (image, cam).
    '''
    image = as_tensor(image)
    _, H, W = image.shape
    if size is None:
        h, w = H - H % multiple, W - W % multiple
    else:
        h, w = (int(v) for v in size)
    if h == 0 or w == 0 or h > H or w > W or h % multiple or w % multiple:
        raise ShapeError(f'Can not crop {H}x{W} into {h}x{w} (multiple of {multiple})')
    if (h, w) == (H, W):
        return image, cam
    top, left = (H - h) // 2, (W - w) // 2
    logger.warning(f'Center-cropping {H}x{W} into {h}x{w}')
    cropped = Tensor(image.data[:, top:top + h, left:left + w])
    return cropped, cam.cropped(top, left, h, w) if cam is not None else None


@dataclass
class TrainingSample:
    '''The target frame k and its sources k - 1 and k + 1.'''
    index: int
    target: Tensor
    sources: list
    cam: CameraModel
    depth: Tensor = None


@dataclass
class SequenceDataset:
    root: Path
    frames: list
    cam: CameraModel
    depths: list = None
    poses: list = None

    def __len__(self):
        return len(self.frames)

    def target_indices(self) -> list:
        '''The frames with both neighbours.'''
        return list(range(1, len(self.frames) - 1))

    def sample(self, k: int) -> TrainingSample:
        return TrainingSample(index=k,
                              target=self.frames[k],
                              sources=[self.frames[k - 1], self.frames[k + 1]],
                              cam=self.cam,
                              depth=self.depths[k] if self.depths else None)


def load_sequence(root, multiple: int = 16, size: tuple = None) -> SequenceDataset:
    '''
    Load the dataset directory written by make_sequence.

    The frames not divisible by multiple are center-cropped, the depths alike.

    :param root: the directory.
    :param multiple: the extent divisor.
    :param size: (height, width) to center-crop to, None keeps the largest divisible extents.

    :return: the SequenceDataset.
    '''
    root = Path(root)
    frame_files = sorted(root.glob('frame_*.ppm'))
    if not frame_files:
        raise FormatError(f'No frame_*.ppm in {root}')
    cam = load_intrinsics(root.joinpath('intrinsics.txt'))

    frames, depths = [], []
    for path in frame_files:
        image = read_ppm(path)
        if image.shape[1:] != (cam.height, cam.width):
            raise FormatError(
                f'{path.name} is {image.shape[1:]}, intrinsics say {cam.height}x{cam.width}')
        frames.append(image)
        depth_path = root.joinpath(path.name.replace('frame_', 'depth_').replace('.ppm', '.lkdt'))
        if depth_path.is_file():
            depths.append(Tensor(load_lkdt(depth_path)))

    if depths and len(depths) != len(frames):
        raise FormatError(f'{len(depths)} depth files for {len(frames)} frames')

    cropped_cam = cam
    frames_out = []
    for image in frames:
        image, cropped_cam = center_crop(image, cam, multiple, size)
        frames_out.append(image)
    depths = [center_crop(d, cam, multiple, size)[0] for d in depths] or None

    pose_path = root.joinpath('poses.txt')
    poses = load_poses(pose_path) if pose_path.is_file() else None
    if poses is not None and len(poses) != len(frames):
        raise FormatError(f'{len(poses)} poses for {len(frames)} frames')

    logger.info(f'Loaded {len(frames)} frames of {cropped_cam.width}x{cropped_cam.height} '
                f'from {root}')
    return SequenceDataset(root, frames_out, cropped_cam, depths, poses)


def iterate_batches(dataset: SequenceDataset, batch: int, rng: np.random.Generator,
                    prefetch: int = 2):
    '''
    Yield the shuffled batches of one epoch.

    :param dataset: the SequenceDataset.
    :param batch: the batch size, the last batch may be smaller.
    :param rng: the generator fixing the order.
    :param prefetch: the queue bound.

    :yield: list of TrainingSample.
    '''
    indices = dataset.target_indices()
    if not indices:
        raise FormatError('The sequence needs at least 3 frames')
    order = [int(k) for k in rng.permutation(indices)]
    chunks = [order[i:i + batch] for i in range(0, len(order), batch)]

    q = queue.Queue(maxsize=prefetch)
    stop = Event()

    def put(item):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        try:
            for chunk in chunks:
                if not put([dataset.sample(k) for k in chunk]):
                    return
        except Exception as err:
            logger.error(f'Batch producer failed: {err!r}')
            put(err)
            return
        put(_DONE)

    Thread(target=produce, daemon=True).start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()


# %% ---- 2025-03-21 ------------------------
# Play ground
if __name__ == '__main__':
    import sys
    ds = load_sequence(sys.argv[1])
    for b in iterate_batches(ds, 2, np.random.default_rng(0)):
        logger.info([s.index for s in b])


# %% ---- 2025-03-21 ------------------------
# Pending
