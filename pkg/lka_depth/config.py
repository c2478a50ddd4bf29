"""
File: config.py
Author: Chuncheng Zhang
Date: 2025-03-22
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The run configuration.

    The defaults are the RunConfig dataclass (mirrored in config/config.yaml),
    the --config file is YAML or the flat key=value text,
    the --set overrides are the OmegaConf dotlist.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-22 ------------------------
# Requirements and constants
import os
import json
import yaml
import hashlib

from pathlib import Path
from typing import List
from dataclasses import dataclass, field, fields
from omegaconf import OmegaConf, DictConfig
from omegaconf.errors import OmegaConfBaseException
from loguru import logger

from .errors import ShapeError, ContractError, FormatError

# The keys fixing the parameter layout, hashed into the checkpoints.
STRUCTURAL_KEYS = ['channels', 'pose_channels', 'use_lka', 'use_offset_upsampler',
                   'lka_dw_kernel', 'lka_dwd_kernel', 'lka_dwd_dilation']


# %% ---- 2025-03-22 ------------------------
# Function and class
@dataclass
class RunConfig:
    width: int = 640
    height: int = 192
    lr: float = 1e-4
    lr_decay_epoch: int = 15
    lr_final: float = 1e-5
    epochs: int = 20
    batch: int = 2
    seed: int = 0
    use_lka: bool = True
    use_offset_upsampler: bool = True
    smoothness_weight: float = 1e-3
    channels: List[int] = field(default_factory=lambda: [16, 32, 64, 128])
    pose_channels: List[int] = field(default_factory=lambda: [16, 32, 64, 64, 64])
    min_depth: float = 0.1
    max_depth: float = 100.0
    ssim_weight: float = 0.85
    automask_jitter: float = 1e-5
    precision: int = 64
    # 0 is unlimited.
    max_steps: int = 0
    # 0 is one pass over the sequence.
    steps_per_epoch: int = 0
    lka_dw_kernel: int = 5
    lka_dwd_kernel: int = 7
    lka_dwd_dilation: int = 3
    median_scaling: bool = True
    eval_min_depth: float = 1e-3
    eval_max_depth: float = 80.0
    debug: bool = False
    # 0 reads LKADEPTH_THREADS, else 1.
    threads: int = 0


def known_keys() -> set:
    return {f.name for f in fields(RunConfig)}


def _drop_unknown(conf: DictConfig, source: str) -> DictConfig:
    keys = known_keys()
    clean = {}
    for k, v in OmegaConf.to_container(conf).items():
        if k not in keys:
            logger.warning(f'Invalid config key in {source}: {k}')
            continue
        clean[k] = v
    return OmegaConf.create(clean)


def read_config_file(path) -> DictConfig:
    '''
    Read YAML (.yaml, .yml) or the flat key=value text file.

    The flat file holds one key=value per line, # starts a comment.
    '''
    path = Path(path)
    if not path.is_file():
        raise FormatError(f'Config file not found: {path}')
    try:
        if path.suffix in ('.yaml', '.yml'):
            return OmegaConf.load(path)
        lines = []
        for line in path.read_text().splitlines():
            line = line.split('#', 1)[0].strip()
            if line:
                lines.append(line.replace(' = ', '=').replace(' =', '=').replace('= ', '='))
        return OmegaConf.from_dotlist(lines)
    except (OmegaConfBaseException, yaml.YAMLError) as err:
        raise FormatError(f'Can not parse {path}: {err}')


def load_config(path=None, overrides: list = (), seed: int = None) -> DictConfig:
    '''
    Assemble the run config.

    :param path: the --config file, None for the defaults.
    :param overrides: the --set key=value items.
    :param seed: the --seed value.

    :return: the structured DictConfig, validated.
    '''
    conf = OmegaConf.structured(RunConfig)
    layers = []
    if path is not None:
        layers.append(_drop_unknown(read_config_file(path), str(path)))
    if overrides:
        try:
            layers.append(_drop_unknown(OmegaConf.from_dotlist(list(overrides)), '--set'))
        except OmegaConfBaseException as err:
            raise ContractError(f'Bad --set override: {err}')
    if seed is not None:
        layers.append(OmegaConf.create(dict(seed=int(seed))))
    try:
        conf = OmegaConf.merge(conf, *layers)
    except OmegaConfBaseException as err:
        raise ContractError(f'Invalid config value: {err}')
    validate(conf)
    logger.debug(f'Config: {OmegaConf.to_container(conf)}')
    return conf


def validate(conf):
    if conf.width % 16 or conf.height % 16:
        raise ShapeError(f'Resolution {conf.width}x{conf.height} must be divisible by 16')
    if not conf.lr > conf.lr_final > 0:
        raise ContractError(f'Need lr > lr_final > 0, got {conf.lr}, {conf.lr_final}')
    if conf.precision not in (32, 64):
        raise ContractError(f'Precision must be 32 or 64, got {conf.precision}')
    if conf.batch < 1 or conf.epochs < 1:
        raise ContractError('batch and epochs must be positive')
    if len(conf.channels) != 4 or len(conf.pose_channels) != 5:
        raise ShapeError('channels needs 4 entries and pose_channels 5')
    return conf


def structure(conf) -> dict:
    '''The structural keys as plain values.'''
    return {k: OmegaConf.to_container(conf[k]) if OmegaConf.is_config(conf[k]) else conf[k]
            for k in STRUCTURAL_KEYS}


def config_hash(conf) -> str:
    '''sha256 of the canonical JSON of the structural keys.'''
    text = json.dumps(structure(conf), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode()).hexdigest()


def resolve_threads(conf) -> int:
    if conf.threads > 0:
        return int(conf.threads)
    try:
        return max(1, int(os.environ.get('LKADEPTH_THREADS', '1')))
    except ValueError:
        logger.warning('LKADEPTH_THREADS is not an integer, using 1')
        return 1


def save_config(path, conf):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    OmegaConf.save(conf, path)
    return path


# %% ---- 2025-03-22 ------------------------
# Play ground
if __name__ == '__main__':
    conf = load_config(overrides=['width=192', 'height=64'])
    logger.info(config_hash(conf))


# %% ---- 2025-03-22 ------------------------
# Pending
