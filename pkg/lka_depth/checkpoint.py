"""
File: checkpoint.py
Author: Chuncheng Zhang
Date: 2025-03-22
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The checkpoint directory, <name>.lkdt per parameter tensor and manifest.json.

    The manifest lists the names, the shapes, the config hash and the structural keys,
    it is written with the sorted keys so equal runs give equal bytes.

Functions:
    1. Requirements and constants
    2. Function and class
"""


# %% ---- 2025-03-22 ------------------------
# Requirements and constants
import json

from pathlib import Path
from loguru import logger

from .errors import ConfigMismatchError, FormatError, ShapeError
from .serialization import save_lkdt, load_lkdt
from .config import structure, config_hash

MANIFEST = 'manifest.json'


# %% ---- 2025-03-22 ------------------------
# Function and class
def save_checkpoint(directory, named_params: dict, conf) -> Path:
    '''
    Write the named parameters.

    :param directory: the checkpoint directory.
    :param named_params: {name: Tensor}.
    :param conf: the run config.

    :return: the directory.
    '''
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, tensor in named_params.items():
        save_lkdt(directory.joinpath(f'{name}.lkdt'), tensor)
    manifest = dict(names=list(named_params),
                    shapes={k: list(v.shape) for k, v in named_params.items()},
                    config_hash=config_hash(conf),
                    structure=structure(conf))
    directory.joinpath(MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2))
    logger.info(f'Saved checkpoint {directory} ({len(named_params)} tensors)')
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory).joinpath(MANIFEST)
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as err:
        raise FormatError(f'Can not read {path}: {err}')


def load_checkpoint(directory, conf=None) -> dict:
    '''
    Read the named arrays.

    :param directory: the checkpoint directory.
    :param conf: the run config to check against, None skips the check.

    :return: {name: np.ndarray}.
    '''
    directory = Path(directory)
    manifest = read_manifest(directory)
    if conf is not None and manifest.get('config_hash') != config_hash(conf):
        expected = structure(conf)
        saved = manifest.get('structure', {})
        diff = {k: (saved.get(k), v) for k, v in expected.items() if saved.get(k) != v}
        raise ConfigMismatchError(diff or dict(config_hash=(manifest.get('config_hash'),
                                                            config_hash(conf))))
    arrays = {}
    for name in manifest['names']:
        arrays[name] = load_lkdt(directory.joinpath(f'{name}.lkdt'))
        if list(arrays[name].shape) != manifest['shapes'][name]:
            raise FormatError(f'{name} has shape {arrays[name].shape}, '
                              f'manifest says {manifest["shapes"][name]}')
    return arrays


def apply_checkpoint(named_params: dict, arrays: dict):
    '''Copy the arrays into the parameters in-place.'''
    missing = set(named_params) - set(arrays)
    if missing:
        raise FormatError(f'Checkpoint misses {sorted(missing)}')
    for name, tensor in named_params.items():
        if arrays[name].shape != tensor.shape:
            raise ShapeError(f'{name}: checkpoint {arrays[name].shape} vs model {tensor.shape}')
        tensor.data[...] = arrays[name]
    return named_params
