"""
File: serialization.py
Author: Chuncheng Zhang
Date: 2025-03-14
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The LKDT tensor container, used for checkpoints, depth maps and golden files.

    Layout (little-endian):
        b'LKDT' | u32 rank | u32 extents x rank | float64 payload (row-major)

Functions:
    1. Requirements and constants
    2. Function and class
"""


# %% ---- 2025-03-14 ------------------------
# Requirements and constants
import numpy as np

from pathlib import Path
from loguru import logger

from .errors import FormatError
from .tensor import Tensor

MAGIC = b'LKDT'


# %% ---- 2025-03-14 ------------------------
# Function and class
def encode_lkdt(value) -> bytes:
    '''
    Encode the tensor or array into the LKDT bytes.

    :param value: Tensor or np.ndarray.

    :return: the bytes.
    '''
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    header = MAGIC + np.array([array.ndim], dtype='<u4').tobytes()
    header += np.array(array.shape, dtype='<u4').tobytes()
    payload = np.ascontiguousarray(array, dtype='<f8').tobytes()
    return header + payload


def decode_lkdt(raw: bytes) -> np.ndarray:
    '''
    Decode the LKDT bytes into float64 array.

    :param raw: the bytes.

    :return: the array.
    '''
    if raw[:4] != MAGIC:
        raise FormatError(f'Bad magic: {raw[:4]!r}')
    if len(raw) < 8:
        raise FormatError('Truncated header')
    rank = int(np.frombuffer(raw, dtype='<u4', count=1, offset=4)[0])
    offset = 8 + 4 * rank
    if len(raw) < offset:
        raise FormatError('Truncated extents')
    shape = tuple(int(e) for e in np.frombuffer(
        raw, dtype='<u4', count=rank, offset=8))
    n = int(np.prod(shape)) if rank else 1
    if len(raw) != offset + 8 * n:
        raise FormatError(
            f'Payload of {len(raw) - offset} bytes does not match shape {shape}')
    data = np.frombuffer(raw, dtype='<f8', count=n, offset=offset)
    return data.reshape(shape).astype(np.float64)


def save_lkdt(path, value):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_lkdt(value))
    logger.debug(f'Saved {path}')
    return path


def load_lkdt(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise FormatError(f'Can not read {path}: {err}')
    return decode_lkdt(raw)
